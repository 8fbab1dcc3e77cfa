"""Domain types shared by every other module.

Time is an integer instance index (one instance = one time unit).  Space is
the unit square.  Costs are reward units (``C * distance``), qualities are
score units.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, fields, replace
from typing import Dict, Iterable, Optional, Sequence, Tuple

EXACT = "exact"
SAMPLED = "sampled"
MOMENTS = "moments"

_TOL = 1e-9


@dataclass(frozen=True)
class Location:
    x: float
    y: float


@dataclass(frozen=True)
class Worker:
    id: int
    loc: Location
    velocity: float
    arrival: int = 0
    predicted: bool = False
    half_width: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.velocity > 0:
            raise ValueError(f"worker {self.id}: velocity must be positive")
        if not self.predicted and self.half_width != (0.0, 0.0):
            raise ValueError(f"worker {self.id}: only predicted workers carry a kernel")


@dataclass(frozen=True)
class Task:
    id: int
    loc: Location
    deadline: float
    arrival: int = 0
    predicted: bool = False
    half_width: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.deadline > self.arrival:
            raise ValueError(f"task {self.id}: deadline must follow arrival")
        if not self.predicted and self.half_width != (0.0, 0.0):
            raise ValueError(f"task {self.id}: only predicted tasks carry a kernel")


@dataclass(frozen=True)
class UncertainScalar:
    """A bounded cost or quality value, either exact or a random variable.

    ``samples`` holds ``(value, weight)`` tuples for the sampled kind.
    """

    kind: str
    mean: float
    variance: float
    lb: float
    ub: float
    samples: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")
        if not (self.lb - _TOL <= self.mean <= self.ub + _TOL):
            raise ValueError(f"mean {self.mean} outside [{self.lb}, {self.ub}]")
        if self.kind == EXACT and not (self.variance == 0 and self.lb == self.mean == self.ub):
            raise ValueError("exact scalar must be degenerate")

    @classmethod
    def exact(cls, value: float) -> "UncertainScalar":
        value = float(value)
        return cls(EXACT, value, 0.0, value, value)

    @property
    def is_exact(self) -> bool:
        return self.variance == 0 and self.lb == self.ub


@dataclass(frozen=True)
class CandidatePair:
    worker_id: int
    task_id: int
    cost: UncertainScalar
    quality: UncertainScalar
    existence_prob: float = 1.0
    worker_predicted: bool = False
    task_predicted: bool = False
    # mean task location, used by the sweep decomposition
    task_loc: Optional[Location] = None

    def __post_init__(self):
        if not 0.0 <= self.existence_prob <= 1.0:
            raise ValueError("existence probability outside [0, 1]")
        if self.cost.lb < 0:
            raise ValueError("cost lower bound must be nonnegative")

    @property
    def is_current(self) -> bool:
        return not (self.worker_predicted or self.task_predicted)

    @property
    def key(self) -> Tuple[int, int]:
        return (self.worker_id, self.task_id)


class ConflictError(ValueError):
    pass


class Assignment:
    """A conflict-free set of pairs with running aggregates.

    Single writer: the solver that owns it.
    """

    def __init__(self, pairs: Iterable[CandidatePair] = ()):
        self._by_worker: Dict[int, CandidatePair] = {}
        self._by_task: Dict[int, CandidatePair] = {}
        self.total_quality_mean = 0.0
        self.total_cost_lb = 0.0
        self.total_cost_ub = 0.0
        self.total_cost_mean = 0.0
        for p in pairs:
            self.add(p)

    def add(self, pair: CandidatePair) -> None:
        if pair.worker_id in self._by_worker:
            raise ConflictError(f"worker {pair.worker_id} already assigned")
        if pair.task_id in self._by_task:
            raise ConflictError(f"task {pair.task_id} already assigned")
        self._by_worker[pair.worker_id] = pair
        self._by_task[pair.task_id] = pair
        self.total_quality_mean += pair.quality.mean
        self.total_cost_lb += pair.cost.lb
        self.total_cost_ub += pair.cost.ub
        self.total_cost_mean += pair.cost.mean

    def remove(self, pair: CandidatePair) -> None:
        if self._by_worker.get(pair.worker_id) is not pair:
            raise KeyError(pair.key)
        del self._by_worker[pair.worker_id]
        del self._by_task[pair.task_id]
        self.total_quality_mean -= pair.quality.mean
        self.total_cost_lb -= pair.cost.lb
        self.total_cost_ub -= pair.cost.ub
        self.total_cost_mean -= pair.cost.mean

    def can_add(self, pair: CandidatePair) -> bool:
        return pair.worker_id not in self._by_worker and pair.task_id not in self._by_task

    def by_worker(self, worker_id: int) -> Optional[CandidatePair]:
        return self._by_worker.get(worker_id)

    def by_task(self, task_id: int) -> Optional[CandidatePair]:
        return self._by_task.get(task_id)

    @property
    def pairs(self) -> list:
        return list(self._by_worker.values())

    @property
    def keys(self) -> set:
        return {p.key for p in self._by_worker.values()}

    def __len__(self):
        return len(self._by_worker)

    def __iter__(self):
        return iter(list(self._by_worker.values()))

    def __contains__(self, pair):
        return self._by_worker.get(pair.worker_id) is pair

    def copy(self) -> "Assignment":
        return Assignment(self._by_worker.values())

    def check(self) -> None:
        """Recompute aggregates from scratch; raises on drift."""
        q = sum(p.quality.mean for p in self)
        lb = sum(p.cost.lb for p in self)
        ub = sum(p.cost.ub for p in self)
        if abs(q - self.total_quality_mean) > _TOL or abs(lb - self.total_cost_lb) > _TOL \
                or abs(ub - self.total_cost_ub) > _TOL:
            raise AssertionError("assignment aggregates drifted")
        if len({p.task_id for p in self}) != len(self):
            raise AssertionError("task assigned twice")


@dataclass
class SimConfig:
    """Run parameters with the default experimental settings."""

    B: float = 200.0
    C: float = 10.0
    v_range: Tuple[float, float] = (0.2, 0.3)
    q_range: Tuple[float, float] = (1.0, 2.0)
    e_range: Tuple[float, float] = (1.0, 2.0)
    w: int = 3
    R: int = 15
    gamma: int = 20
    delta: float = 0.5
    seed: int = 0
    m: int = 3000
    n: int = 3000
    worker_dist: str = "gaussian"
    task_dist: str = "zipf"
    zipf_skew: float = 0.3

    def validate(self) -> "SimConfig":
        for name in ("v_range", "q_range", "e_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: [{lo}, {hi}]")
        if not self.B > 0:
            raise ValueError("budget B must be positive")
        if self.gamma < 1 or self.w < 1 or self.R < 1:
            raise ValueError("gamma, w and R must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.v_range[0]:
            raise ValueError("velocities must be positive")
        if self.q_range[0] < 0:
            raise ValueError("quality scores must be nonnegative")
        if self.e_range[0] <= 0:
            raise ValueError("deadline offsets must be positive")
        if self.m < 0 or self.n < 0:
            raise ValueError("entity counts must be nonnegative")
        for name in ("worker_dist", "task_dist"):
            if getattr(self, name) not in ("gaussian", "uniform", "zipf"):
                raise ValueError(f"{name}: unknown distribution {getattr(self, name)!r}")
        return self

    def updated(self, **changes) -> "SimConfig":
        return replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        for name in ("v_range", "q_range", "e_range"):
            if name in kw:
                kw[name] = tuple(float(v) for v in kw[name])
        return cls(**kw).validate()


def euclidean_distance(a: Location, b: Location) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def travel_cost_exact(worker: Worker, task: Task, C: float) -> UncertainScalar:
    if worker.predicted or task.predicted:
        raise ValueError("predicted entities have uncertain costs; use mqa.uncertainty")
    return UncertainScalar.exact(C * euclidean_distance(worker.loc, task.loc))


def is_valid_pair(worker: Worker, task: Task, now: float, B: float, C: float,
                  dist: Optional[float] = None) -> bool:
    """Deadline and budget check for a worker-task pairing.

    Predicted entities are checked at their kernel centers.  The worker cannot
    leave before both entities exist, so travel starts at the later arrival.
    """
    if dist is None:
        dist = euclidean_distance(worker.loc, task.loc)
    start = max(now, worker.arrival, task.arrival)
    if start + dist / worker.velocity > task.deadline:
        return False
    return C * dist <= B


class PairModel:
    """Source of distances and current-pair quality scores."""

    def distance(self, worker: Worker, task: Task) -> float:
        return euclidean_distance(worker.loc, task.loc)

    def distance_matrix(self, workers: Sequence[Worker], tasks: Sequence[Task]):
        import numpy as np
        wxy = np.array([(w.loc.x, w.loc.y) for w in workers], dtype=float).reshape(-1, 2)
        txy = np.array([(t.loc.x, t.loc.y) for t in tasks], dtype=float).reshape(-1, 2)
        return np.hypot(wxy[:, None, 0] - txy[None, :, 0], wxy[:, None, 1] - txy[None, :, 1])

    def quality(self, worker: Worker, task: Task) -> float:
        raise NotImplementedError


class SeededQualityModel(PairModel):
    """Euclidean distances; qualities drawn lazily per pair from a truncated Gaussian.

    Each score depends only on (seed, worker id, task id), so it is stable no
    matter in which order pairs are materialized.
    """

    def __init__(self, q_range: Tuple[float, float], seed: int = 0):
        self.q_range = (float(q_range[0]), float(q_range[1]))
        self.seed = seed
        self._cache: Dict[Tuple[int, int], float] = {}

    def quality(self, worker: Worker, task: Task) -> float:
        key = (worker.id, task.id)
        q = self._cache.get(key)
        if q is None:
            rng = random.Random(f"{self.seed}:{worker.id}:{task.id}")
            q = truncated_gauss(rng, self.q_range)
            self._cache[key] = q
        return q


class TablePairModel(PairModel):
    """Explicit distance and quality tables keyed by (worker id, task id)."""

    def __init__(self, dist: Dict[Tuple[int, int], float], quality: Dict[Tuple[int, int], float]):
        self.dist = dict(dist)
        self.qual = dict(quality)

    def distance(self, worker, task):
        return self.dist.get((worker.id, task.id), math.inf)

    def distance_matrix(self, workers, tasks):
        import numpy as np
        return np.array([[self.distance(w, t) for t in tasks] for w in workers],
                        dtype=float).reshape(len(workers), len(tasks))

    def quality(self, worker, task):
        return self.qual[(worker.id, task.id)]


def truncated_gauss(rng: random.Random, bounds: Sequence[float]) -> float:
    """N(mid, width^2) restricted to ``bounds`` by rejection."""
    lo, hi = bounds
    if hi == lo:
        return float(lo)
    mid, sd = (lo + hi) / 2.0, hi - lo
    while True:
        x = rng.gauss(mid, sd)
        if lo <= x <= hi:
            return x
