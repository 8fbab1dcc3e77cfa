"""Workloads, the multi-instance simulation loop and metric reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adaptive import TimingInputs, best_partner_terms, estimate_q_now, should_run_now
from .core import Location, PairModel, SeededQualityModel, SimConfig, TablePairModel, Task, Worker
from .prediction import GridModel, candidate_pairs, forecast_counts, generate_predicted, record_instance
from .solvers import solve_bb, solve_dnc, solve_greedy, solve_random

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("instance", "quality", "cost", "wall_ms", "rel_err_workers", "rel_err_tasks",
                  "n_available_w", "n_available_t", "n_assigned", "n_expired")


@dataclass
class ArrivalStream:
    """New workers and tasks per instance; index 0 holds instance 1."""

    workers: List[List[Worker]]
    tasks: List[List[Task]]
    model: Optional[PairModel] = None

    def __post_init__(self):
        if len(self.workers) != len(self.tasks):
            raise ValueError("worker and task feeds cover different horizons")
        for p, (ws, ts) in enumerate(zip(self.workers, self.tasks), start=1):
            for e in list(ws) + list(ts):
                if e.arrival != p:
                    raise ValueError(f"entity {e.id} arrives at {e.arrival}, listed under {p}")
                if not (0.0 <= e.loc.x <= 1.0 and 0.0 <= e.loc.y <= 1.0):
                    raise ValueError(f"entity {e.id} lies outside the unit square")

    @property
    def R(self) -> int:
        return len(self.workers)

    @classmethod
    def empty(cls, R: int) -> "ArrivalStream":
        return cls([[] for _ in range(R)], [[] for _ in range(R)])


@dataclass
class InstanceMetrics:
    instance: int
    quality: float = 0.0
    cost: float = 0.0
    wall_ms: float = 0.0
    rel_err_workers: float = 0.0
    rel_err_tasks: float = 0.0
    n_available_w: int = 0
    n_available_t: int = 0
    n_assigned: int = 0
    n_expired: int = 0


# ---------------------------------------------------------------- generators

def _split(total: int, R: int) -> List[int]:
    base, extra = divmod(total, R)
    return [base + (1 if p < extra else 0) for p in range(R)]


def _gaussian_points(rng: np.random.Generator, k: int) -> np.ndarray:
    out = np.empty((0, 2))
    while len(out) < k:
        draw = rng.normal(0.5, 1.0, size=(max(4 * (k - len(out)), 16), 2))
        keep = draw[np.all((draw >= 0) & (draw <= 1), axis=1)]
        out = np.vstack([out, keep])
    return out[:k]


def _zipf_points(rng: np.random.Generator, k: int, gamma: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, gamma * gamma + 1, dtype=float)
    prob = ranks ** -skew
    prob /= prob.sum()
    cells = rng.choice(gamma * gamma, size=k, p=prob)
    # row-major: cell = row * gamma + column, row along y
    col, row = cells % gamma, cells // gamma
    u = rng.random((k, 2))
    return np.column_stack([(col + u[:, 0]) / gamma, (row + u[:, 1]) / gamma])


def sample_locations(rng: np.random.Generator, k: int, kind: str, gamma: int,
                     skew: float) -> np.ndarray:
    if k == 0:
        return np.empty((0, 2))
    if kind == "gaussian":
        return _gaussian_points(rng, k)
    if kind == "uniform":
        return rng.random((k, 2))
    if kind == "zipf":
        return _zipf_points(rng, k, gamma, skew)
    raise ValueError(f"unknown distribution {kind!r}")


def _truncated_normal(rng: np.random.Generator, k: int, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(k, float(lo))
    mid, sd = (lo + hi) / 2.0, hi - lo
    out = np.empty(0)
    while len(out) < k:
        draw = rng.normal(mid, sd, size=max(4 * (k - len(out)), 16))
        out = np.concatenate([out, draw[(draw >= lo) & (draw <= hi)]])
    return out[:k]


def _workers_at(p, xy, vel, start_id):
    return [Worker(start_id + k, Location(float(x), float(y)), float(v), p)
            for k, ((x, y), v) in enumerate(zip(xy, vel))]


def _tasks_at(p, xy, offsets, start_id):
    return [Task(start_id + k, Location(float(x), float(y)), p + float(e), p)
            for k, ((x, y), e) in enumerate(zip(xy, offsets))]


def generate_synthetic(config: SimConfig, seed: Optional[int] = None) -> ArrivalStream:
    """Workers and tasks spread evenly over ``R`` instances."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    workers, tasks = [], []
    wid = tid = 0
    for p, (nw, nt) in enumerate(zip(_split(config.n, config.R), _split(config.m, config.R)), start=1):
        wxy = sample_locations(rng, nw, config.worker_dist, config.gamma, config.zipf_skew)
        vel = _truncated_normal(rng, nw, *config.v_range)
        txy = sample_locations(rng, nt, config.task_dist, config.gamma, config.zipf_skew)
        off = rng.uniform(config.e_range[0], config.e_range[1], nt)
        workers.append(_workers_at(p, wxy, vel, wid))
        tasks.append(_tasks_at(p, txy, off, tid))
        wid += nw
        tid += nt
    return ArrivalStream(workers, tasks)


def rate_stream(gamma: int, rate: float, R: int, seed: int = 0, kind: str = "stationary",
                config: Optional[SimConfig] = None, walk_sd: float = 0.3) -> ArrivalStream:
    """Per-cell Poisson arrivals for both sides.

    ``stationary`` keeps every cell at ``rate``; ``random-walk`` lets each
    cell's rate drift by a log-normal step per instance.
    """
    if kind not in ("stationary", "random-walk"):
        raise ValueError(f"unknown arrival kind {kind!r}")
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    lam = {side: np.full((gamma, gamma), float(rate)) for side in ("w", "t")}
    workers, tasks = [], []
    ids = {"w": 0, "t": 0}
    for p in range(1, R + 1):
        made = {}
        for side in ("w", "t"):
            if kind == "random-walk" and p > 1:
                lam[side] = lam[side] * np.exp(rng.normal(0.0, walk_sd, size=lam[side].shape))
            counts = rng.poisson(lam[side])
            i, j = np.nonzero(counts)
            reps = counts[i, j]
            ci, cj = np.repeat(i, reps), np.repeat(j, reps)
            u = rng.random((len(ci), 2))
            made[side] = np.column_stack([(ci + u[:, 0]) / gamma, (cj + u[:, 1]) / gamma])
        vel = _truncated_normal(rng, len(made["w"]), *config.v_range)
        off = rng.uniform(config.e_range[0], config.e_range[1], len(made["t"]))
        workers.append(_workers_at(p, made["w"], vel, ids["w"]))
        tasks.append(_tasks_at(p, made["t"], off, ids["t"]))
        ids["w"] += len(made["w"])
        ids["t"] += len(made["t"])
    return ArrivalStream(workers, tasks)


def load_checkins(path: str, role: str, R: int, config: Optional[SimConfig] = None,
                  seed: int = 0) -> Tuple[ArrivalStream, int]:
    """Read ``user_id,latitude,longitude,unix_time`` rows as one side of a stream.

    Returns the stream and the number of skipped malformed rows.
    """
    if role not in ("worker", "task"):
        raise ValueError("role must be 'worker' or 'task'")
    config = config or SimConfig()
    rows, skipped = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        for k, rec in enumerate(csv.reader(fh)):
            if not rec or all(not f.strip() for f in rec):
                continue
            if k == 0 and not _is_number(rec[0]):
                continue
            try:
                lat, lon, ts = float(rec[1]), float(rec[2]), float(rec[3])
                if not all(map(math.isfinite, (lat, lon, ts))):
                    raise ValueError
            except (ValueError, IndexError):
                skipped += 1
                continue
            rows.append((lat, lon, ts))
    if not rows:
        raise ValueError(f"{path}: no valid check-in rows")
    arr = np.array(rows)
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    y = (arr[:, 0] - lo[0]) / span[0]
    x = (arr[:, 1] - lo[1]) / span[1]
    t_span = hi[2] - lo[2]
    if t_span > 0:
        inst = np.minimum(1 + np.floor((arr[:, 2] - lo[2]) / t_span * R), R).astype(int)
    else:
        inst = np.ones(len(arr), dtype=int)
    rng = np.random.default_rng(seed)
    stream = ArrivalStream.empty(R)
    next_id = 0
    for p in range(1, R + 1):
        sel = np.nonzero(inst == p)[0]
        xy = np.column_stack([x[sel], y[sel]])
        if role == "worker":
            vel = _truncated_normal(rng, len(sel), *config.v_range)
            stream.workers[p - 1] = _workers_at(p, xy, vel, next_id)
        else:
            off = rng.uniform(config.e_range[0], config.e_range[1], len(sel))
            stream.tasks[p - 1] = _tasks_at(p, xy, off, next_id)
        next_id += len(sel)
    return stream, skipped


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def combine_streams(worker_side: ArrivalStream, task_side: ArrivalStream) -> ArrivalStream:
    if worker_side.R != task_side.R:
        raise ValueError("streams cover different horizons")
    return ArrivalStream(worker_side.workers, task_side.tasks, worker_side.model or task_side.model)


# ---------------------------------------------------------------- workload files

def dump_workload(stream: ArrivalStream) -> str:
    lines = []
    for p in range(1, stream.R + 1):
        for w in stream.workers[p - 1]:
            lines.append({"role": "worker", "instance": p, "id": w.id, "x": w.loc.x,
                          "y": w.loc.y, "v": w.velocity})
        for t in stream.tasks[p - 1]:
            lines.append({"role": "task", "instance": p, "id": t.id, "x": t.loc.x,
                          "y": t.loc.y, "deadline": t.deadline})
    if isinstance(stream.model, TablePairModel):
        for (w, t), q in sorted(stream.model.qual.items()):
            lines.append({"role": "pair", "worker": w, "task": t,
                          "dist": stream.model.dist[(w, t)], "q": q})
    return "".join(json.dumps(rec) + "\n" for rec in lines)


def parse_workload(text: str, R: Optional[int] = None,
                   config: Optional[SimConfig] = None) -> ArrivalStream:
    """Parse JSON-lines workload records.

    Missing velocities and deadlines take range midpoints; missing ids are
    numbered by appearance.  ``pair`` records override distances and scores.
    """
    config = config or SimConfig()
    recs = [json.loads(line) for line in text.splitlines() if line.strip()]
    horizon = max([r["instance"] for r in recs if "instance" in r], default=0)
    R = max(R or 0, horizon)
    stream = ArrivalStream.empty(R)
    dist, qual = {}, {}
    auto = {"worker": 0, "task": 0}
    v_mid = sum(config.v_range) / 2.0
    e_mid = sum(config.e_range) / 2.0
    for k, r in enumerate(recs):
        role = r.get("role")
        if role == "pair":
            key = (int(r["worker"]), int(r["task"]))
            dist[key] = float(r["dist"])
            qual[key] = float(r["q"])
            continue
        if role not in ("worker", "task"):
            raise ValueError(f"line {k + 1}: unknown role {role!r}")
        p = int(r["instance"])
        if not 1 <= p:
            raise ValueError(f"line {k + 1}: instance must be >= 1")
        eid = int(r["id"]) if "id" in r else auto[role]
        auto[role] = max(auto[role], eid + 1)
        loc = Location(float(r["x"]), float(r["y"]))
        if role == "worker":
            stream.workers[p - 1].append(Worker(eid, loc, float(r.get("v", v_mid)), p))
        else:
            stream.tasks[p - 1].append(Task(eid, loc, float(r.get("deadline", p + e_mid)), p))
    if qual:
        stream.model = TablePairModel(dist, qual)
    ArrivalStream.__post_init__(stream)
    return stream


# ---------------------------------------------------------------- simulation

def relative_error(est: float, act: float) -> float:
    if act == 0:
        return 0.0 if est == 0 else 1.0
    return abs(est - act) / act


def cell_relative_error(est: np.ndarray, act: np.ndarray) -> float:
    est = np.asarray(est, dtype=float)
    act = np.asarray(act, dtype=float)
    safe = np.where(act > 0, act, 1.0)
    err = np.where(act > 0, np.abs(est - act) / safe, (est != 0).astype(float))
    return float(err.mean())


class Simulator:
    """Runs one stream through the assign-and-carry-over loop.

    Workers that finish a task come back at the task location after the
    travel time, counted as new arrivals.  Unassigned tasks stay open until
    their deadline passes.
    """

    def __init__(self, stream: ArrivalStream, solver: str, config: SimConfig,
                 prediction: bool = True, adaptive: bool = False, timing: bool = False,
                 model: Optional[PairModel] = None, clairvoyant: bool = False,
                 exact_q_now: bool = False, bb_max_tasks: int = 20):
        if solver not in ("greedy", "dnc", "random", "bb"):
            raise ValueError(f"unknown solver {solver!r}")
        self.stream = stream
        self.solver = solver
        self.config = config.validate()
        self.prediction = prediction
        self.adaptive = adaptive
        self.timing = timing
        self.clairvoyant = clairvoyant
        self.exact_q_now = exact_q_now
        self.bb_max_tasks = bb_max_tasks
        self.model = model or stream.model or SeededQualityModel(config.q_range, config.seed)
        self.grid = GridModel(config.gamma, config.w)
        self.rng = np.random.default_rng([config.seed, 7])
        self.available: Dict[int, Worker] = {}
        self.open_tasks: Dict[int, Task] = {}
        self.busy: List[Tuple[int, Worker]] = []
        self.assigned_tasks = 0
        self.expired_tasks = 0
        self.seen_workers = 0
        self.seen_tasks = 0
        self.n_predicted = 0
        self.last_opt: Optional[int] = None
        self.skipped_rounds = 0
        self.assignments: List[list] = []

    def run(self) -> List[InstanceMetrics]:
        return [self.step(p) for p in range(1, self.stream.R + 1)]

    def _predict(self, p: int):
        if self.clairvoyant:
            if p >= self.stream.R:
                return [], []
            return ([replace(w, predicted=True) for w in self.stream.workers[p]],
                    [replace(t, predicted=True) for t in self.stream.tasks[p]])
        counts = forecast_counts(self.grid)
        if p >= self.stream.R:
            return [], []
        v_mid = sum(self.config.v_range) / 2.0
        e_mid = sum(self.config.e_range) / 2.0
        return generate_predicted(counts, self.grid, self.rng, arrival=p + 1,
                                  velocity=v_mid, deadline_offset=e_mid)

    def _solve(self, pairs, p: int):
        B = self.config.B
        b_max = 2.0 * B if self.prediction else B
        delta = self.config.delta
        if self.solver == "greedy":
            return solve_greedy(pairs, B, b_max, delta)
        if self.solver == "dnc":
            return solve_dnc(pairs, B, b_max, delta)
        if self.solver == "random":
            rng = random.Random(f"{self.config.seed}:random:{p}")
            return solve_random(pairs, B, rng, b_max)
        return solve_bb([q for q in pairs if q.is_current], B, self.bb_max_tasks)

    def _timing_inputs(self, pairs, n_next_w: float, n_next_t: float) -> TimingInputs:
        n_w, n_t = len(self.available), len(self.open_tasks)
        opt = self.last_opt if self.last_opt is not None else min(n_w, n_t)
        opt = min(opt, n_w, n_t)
        cur = lambda side: [q for q in pairs if not (q.worker_predicted if side == "worker" else q.task_predicted)]
        pred = lambda side: [q for q in pairs if (q.worker_predicted if side == "worker" else q.task_predicted)]
        return TimingInputs(
            n_w, n_t, n_next_w, n_next_t, opt,
            best_partner_terms(cur("worker"), "worker"), best_partner_terms(pred("worker"), "worker"),
            best_partner_terms(cur("task"), "task"), best_partner_terms(pred("task"), "task"),
            solver="dnc" if self.solver == "dnc" else "greedy",
            deg_t=len(pairs) / max(n_t + n_next_t, 1))

    def step(self, p: int) -> InstanceMetrics:
        C, B = self.config.C, self.config.B
        back = [w for due, w in self.busy if due == p]
        self.busy = [(due, w) for due, w in self.busy if due != p]
        expired = [tid for tid, t in self.open_tasks.items() if t.deadline < p]
        for tid in expired:
            del self.open_tasks[tid]
        self.expired_tasks += len(expired)

        new_w = list(self.stream.workers[p - 1])
        new_t = list(self.stream.tasks[p - 1])
        self.seen_workers += len(new_w)
        self.seen_tasks += len(new_t)
        arrivals_w = new_w + back
        for w in arrivals_w:
            self.available[w.id] = w
        for t in new_t:
            self.open_tasks[t.id] = t

        m = InstanceMetrics(p, n_expired=len(expired),
                            n_available_w=len(self.available), n_available_t=len(self.open_tasks))
        if self.grid.n_recorded:
            fw, ft = forecast_counts(self.grid)
            record_instance(self.grid, arrivals_w, new_t)
            m.rel_err_workers = cell_relative_error(fw, self.grid.worker_history[-1])
            m.rel_err_tasks = cell_relative_error(ft, self.grid.task_history[-1])
        else:
            record_instance(self.grid, arrivals_w, new_t)

        pred_w, pred_t = self._predict(p) if self.prediction else ([], [])
        self.n_predicted += len(pred_w) + len(pred_t)
        workers = sorted(self.available.values(), key=lambda w: w.id) + pred_w
        tasks = sorted(self.open_tasks.values(), key=lambda t: t.id) + pred_t
        pairs = candidate_pairs(workers, tasks, p, self.model, C, B, clairvoyant=self.clairvoyant)

        if self.adaptive and p < self.stream.R:
            if self.prediction:
                n_next_w, n_next_t = len(pred_w), len(pred_t)
            else:
                fw, ft = forecast_counts(self.grid)
                n_next_w, n_next_t = int(fw.sum()), int(ft.sum())
            inputs = self._timing_inputs(pairs, n_next_w, n_next_t)
            if self.exact_q_now:
                q_now = self._solve([q for q in pairs if q.is_current], p).total_quality
            else:
                q_now = estimate_q_now(inputs)
            if not should_run_now(inputs, q_now):
                self.skipped_rounds += 1
                self.assignments.append([])
                self._check(p)
                return m

        out = self._solve(pairs, p)
        chosen = sorted(out.assignment.pairs, key=lambda q: q.key)
        for pair in chosen:
            w = self.available.pop(pair.worker_id)
            t = self.open_tasks.pop(pair.task_id)
            travel = self.model.distance(w, t) / w.velocity
            due = p + max(1, math.ceil(travel - 1e-9))
            self.busy.append((due, Worker(w.id, t.loc, w.velocity, due)))
        self.assigned_tasks += len(chosen)
        self.last_opt = len(chosen)
        self.assignments.append([q.key for q in chosen])

        m.quality = out.total_quality
        m.cost = out.total_cost
        m.n_assigned = len(chosen)
        m.wall_ms = out.elapsed * 1000.0 if self.timing else 0.0
        if m.cost > B + 1e-9:
            raise AssertionError(f"instance {p}: cost {m.cost} exceeds budget {B}")
        self._check(p)
        return m

    def _check(self, p: int) -> None:
        if len(self.available) + len(self.busy) != self.seen_workers:
            raise AssertionError(f"instance {p}: worker bookkeeping does not balance")
        if len(self.open_tasks) + self.assigned_tasks + self.expired_tasks != self.seen_tasks:
            raise AssertionError(f"instance {p}: task bookkeeping does not balance")


def run_simulation(stream: ArrivalStream, solver_kind: str, config: SimConfig,
                   **options) -> List[InstanceMetrics]:
    return Simulator(stream, solver_kind, config, **options).run()


def evaluate_prediction(stream: ArrivalStream, w: int, gamma: int) -> List[Tuple[int, float, float]]:
    """Replay arrivals through a grid; (instance, worker error, task error) from instance 2 on."""
    grid = GridModel(gamma, w)
    rows = []
    for p in range(1, stream.R + 1):
        if grid.n_recorded:
            fw, ft = forecast_counts(grid)
            record_instance(grid, stream.workers[p - 1], stream.tasks[p - 1])
            rows.append((p, cell_relative_error(fw, grid.worker_history[-1]),
                         cell_relative_error(ft, grid.task_history[-1])))
        else:
            record_instance(grid, stream.workers[p - 1], stream.tasks[p - 1])
    return rows


# ---------------------------------------------------------------- reports

def summarize(metrics: Sequence[InstanceMetrics]) -> dict:
    n = len(metrics)
    mean = lambda f: sum(getattr(x, f) for x in metrics) / n if n else 0.0
    total = lambda f: sum(getattr(x, f) for x in metrics)
    return {
        "instance": "TOTAL",
        "quality": total("quality"),
        "cost": total("cost"),
        "wall_ms": mean("wall_ms"),
        "rel_err_workers": mean("rel_err_workers"),
        "rel_err_tasks": mean("rel_err_tasks"),
        "n_available_w": total("n_available_w"),
        "n_available_t": total("n_available_t"),
        "n_assigned": total("n_assigned"),
        "n_expired": total("n_expired"),
    }


def format_report(metrics: Sequence[InstanceMetrics], fmt: str = "csv") -> str:
    if fmt == "json":
        body = {"instances": [asdict(x) for x in metrics]}
        if metrics:
            body["summary"] = summarize(metrics)
        return json.dumps(body, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for x in metrics:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple_ordered(x)])
    if metrics:
        s = summarize(metrics)
        writer.writerow([repr(s[c]) if isinstance(s[c], float) else s[c] for c in REPORT_COLUMNS])
    return buf.getvalue()


def astuple_ordered(x: InstanceMetrics) -> list:
    return [getattr(x, c) for c in REPORT_COLUMNS]


def emit_report(metrics: Sequence[InstanceMetrics], fmt: str, path: str) -> None:
    text = format_report(metrics, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_report(path: str) -> List[InstanceMetrics]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    kinds = {f.name: f.type for f in fields(InstanceMetrics)}
    if text.lstrip().startswith("{"):
        return [InstanceMetrics(**rec) for rec in json.loads(text)["instances"]]
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["instance"] == "TOTAL":
            continue
        out.append(InstanceMetrics(**{k: (int(v) if kinds[k] == "int" else float(v))
                                      for k, v in row.items()}))
    return out
