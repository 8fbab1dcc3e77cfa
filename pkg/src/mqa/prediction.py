"""Grid-based arrival forecasting and candidate-pair construction.

The unit square is cut into ``gamma x gamma`` cells.  Each cell keeps the
last ``w`` arrival counts for workers and tasks; a least-squares line over
that window forecasts the next count, and predicted entities are sampled
uniformly inside the cell with a uniform kernel around each sample.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    MOMENTS,
    CandidatePair,
    Location,
    PairModel,
    Task,
    UncertainScalar,
    Worker,
)
from .uncertainty import cost_moments_arrays, uniform_sampled_scalar

KDE_CONSTANT = 1.8431

PRED_WORKER = "pred_worker"      # predicted worker, current task
PRED_TASK = "pred_task"          # current worker, predicted task
PRED_BOTH = "pred_both"          # predicted worker, predicted task
CASES = (PRED_WORKER, PRED_TASK, PRED_BOTH)


class GridModel:
    """Sliding-window arrival histories over a ``gamma x gamma`` grid."""

    def __init__(self, gamma: int = 20, w: int = 3):
        if gamma < 1 or w < 1:
            raise ValueError("gamma and w must be >= 1")
        self.gamma = gamma
        self.w = w
        self.worker_history: deque = deque(maxlen=w)
        self.task_history: deque = deque(maxlen=w)
        # per-dimension spread of the latest real coordinates
        self.worker_sigma = (0.0, 0.0)
        self.task_sigma = (0.0, 0.0)

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        g = self.gamma
        return (min(max(int(math.floor(x * g)), 0), g - 1),
                min(max(int(math.floor(y * g)), 0), g - 1))

    def cell_rect(self, i: int, j: int) -> Tuple[float, float, float, float]:
        g = self.gamma
        return (i / g, (i + 1) / g, j / g, (j + 1) / g)

    def histogram(self, locs: Sequence[Location]) -> np.ndarray:
        counts = np.zeros((self.gamma, self.gamma), dtype=np.int64)
        if locs:
            xy = np.array([(l.x, l.y) for l in locs], dtype=float)
            idx = np.clip(np.floor(xy * self.gamma).astype(np.int64), 0, self.gamma - 1)
            np.add.at(counts, (idx[:, 0], idx[:, 1]), 1)
        return counts

    @property
    def n_recorded(self) -> int:
        return len(self.worker_history)


def _spread(locs: Sequence[Location]) -> Tuple[float, float]:
    if len(locs) < 2:
        return (0.0, 0.0)
    xy = np.array([(l.x, l.y) for l in locs], dtype=float)
    sd = xy.std(axis=0, ddof=1)
    return (float(sd[0]), float(sd[1]))


def record_instance(grid: GridModel, workers: Sequence[Worker], tasks: Sequence[Task]) -> None:
    """Append this instance's new-arrival counts to every cell."""
    wl = [w.loc for w in workers]
    tl = [t.loc for t in tasks]
    grid.worker_history.append(grid.histogram(wl))
    grid.task_history.append(grid.histogram(tl))
    grid.worker_sigma = _spread(wl)
    grid.task_sigma = _spread(tl)


def ols_forecast(history: np.ndarray) -> np.ndarray:
    """Least-squares line through (1, c_1) .. (k, c_k), evaluated at k + 1.

    ``history`` has shape (k, ...); the result is rounded half-up and
    clamped at zero.
    """
    h = np.asarray(history, dtype=float)
    k = h.shape[0]
    if k == 0:
        raise ValueError("no history to forecast from")
    if k == 1:
        raw = h[0]
    else:
        x = np.arange(1, k + 1, dtype=float)
        xc = x - x.mean()
        xc = xc.reshape((k,) + (1,) * (h.ndim - 1))
        mean = h.mean(axis=0)
        slope = (xc * (h - mean)).sum(axis=0) / (xc ** 2).sum()
        raw = mean + slope * (k + 1 - (k + 1) / 2.0)
    # the epsilon keeps exact .5 ties from falling just short after rounding error
    return np.maximum(np.floor(raw + 0.5 + 1e-9), 0).astype(np.int64)


def forecast_counts(grid: GridModel) -> Tuple[np.ndarray, np.ndarray]:
    """Forecast per-cell (worker, task) counts for the next instance."""
    if grid.n_recorded == 0:
        raise ValueError("forecast needs at least one recorded instance")
    return (ols_forecast(np.stack(grid.worker_history)),
            ols_forecast(np.stack(grid.task_history)))


def kde_bandwidth(sigma_hat: float, n: int) -> float:
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be nonnegative")
    if n < 1:
        raise ValueError("n must be >= 1")
    return sigma_hat * KDE_CONSTANT * n ** (-0.2)


def _sample_cells(counts: np.ndarray, grid: GridModel, rng: np.random.Generator,
                  sigma: Tuple[float, float]):
    out = []
    g = grid.gamma
    # row-major over (row = y cell, column = x cell)
    for j in range(g):
        for i in range(g):
            k = int(counts[i, j])
            if k <= 0:
                continue
            x0, x1, y0, y1 = grid.cell_rect(i, j)
            xs = rng.uniform(x0, x1, k)
            ys = rng.uniform(y0, y1, k)
            hw = (kde_bandwidth(sigma[0], k), kde_bandwidth(sigma[1], k))
            out.extend((float(x), float(y), hw) for x, y in zip(xs, ys))
    return out


def generate_predicted(counts: Tuple[np.ndarray, np.ndarray], grid: GridModel,
                       rng: np.random.Generator, *, arrival: int, velocity: float,
                       deadline_offset: float,
                       sigma_w: Optional[Tuple[float, float]] = None,
                       sigma_t: Optional[Tuple[float, float]] = None) -> Tuple[List[Worker], List[Task]]:
    """Sample predicted workers and tasks for the instance ``arrival``.

    Predicted ids are negative so they never collide with real ones.
    """
    wc, tc = counts
    sigma_w = grid.worker_sigma if sigma_w is None else sigma_w
    sigma_t = grid.task_sigma if sigma_t is None else sigma_t
    workers = [Worker(-(k + 1), Location(x, y), velocity, arrival, True, hw)
               for k, (x, y, hw) in enumerate(_sample_cells(wc, grid, rng, sigma_w))]
    tasks = [Task(-(k + 1), Location(x, y), arrival + deadline_offset, arrival, True, hw)
             for k, (x, y, hw) in enumerate(_sample_cells(tc, grid, rng, sigma_t))]
    return workers, tasks


def quality_distribution(case: str, scores: Sequence[float]) -> Optional[UncertainScalar]:
    """Uniform-weight distribution over the sample scores; ``None`` when empty.

    The caller picks the scores: current workers able to reach the task
    (predicted worker), tasks reachable by the worker (predicted task), or
    every current valid pair (both predicted).
    """
    if case not in CASES:
        raise ValueError(f"unknown pair case {case!r}")
    if len(scores) == 0:
        return None
    return uniform_sampled_scalar(list(scores))


def existence_probability(case: Optional[str], count: float, n_workers: int, n_tasks: int) -> float:
    if case is None:
        return 1.0
    if case == PRED_WORKER:
        return min(count / n_workers, 1.0) if n_workers else 0.0
    if case == PRED_TASK:
        return min(count / n_tasks, 1.0) if n_tasks else 0.0
    if case == PRED_BOTH:
        return min(count / (n_workers * n_tasks), 1.0) if n_workers and n_tasks else 0.0
    raise ValueError(f"unknown pair case {case!r}")


def _boxes(entities):
    lo = np.array([[min(max(e.loc.x - e.half_width[0], 0.0), 1.0),
                    min(max(e.loc.y - e.half_width[1], 0.0), 1.0)] for e in entities], dtype=float)
    hi = np.array([[min(max(e.loc.x + e.half_width[0], 0.0), 1.0),
                    min(max(e.loc.y + e.half_width[1], 0.0), 1.0)] for e in entities], dtype=float)
    return lo.reshape(-1, 2), hi.reshape(-1, 2)


def _reachable(workers, tasks, now, dist):
    """Deadline feasibility matrix from a distance matrix."""
    if not workers or not tasks:
        return np.zeros((len(workers), len(tasks)), dtype=bool)
    v = np.array([w.velocity for w in workers])[:, None]
    wa = np.array([w.arrival for w in workers], dtype=float)[:, None]
    ta = np.array([t.arrival for t in tasks], dtype=float)[None, :]
    dl = np.array([t.deadline for t in tasks], dtype=float)[None, :]
    start = np.maximum(np.maximum(wa, ta), float(now))
    with np.errstate(invalid="ignore"):
        return start + dist / v <= dl


def candidate_pairs(workers: Sequence[Worker], tasks: Sequence[Task], now: float,
                    model: PairModel, C: float, B: float,
                    clairvoyant: bool = False) -> List[CandidatePair]:
    """All valid pairs over current and predicted entities.

    ``clairvoyant`` treats predicted entities as if their true location and
    scores were known (exact costs, model qualities, existence 1).  It exists
    for worked examples where the future is given.
    """
    cur_w = [w for w in workers if not w.predicted]
    cur_t = [t for t in tasks if not t.predicted]
    if clairvoyant:
        return _exact_pairs(list(workers), list(tasks), now, model, C, B)

    pairs = _exact_pairs(cur_w, cur_t, now, model, C, B)
    pred_w = [w for w in workers if w.predicted]
    pred_t = [t for t in tasks if t.predicted]
    if not (pred_w or pred_t) or not pairs:
        # without any current valid pair every predicted quality sample set is empty
        return pairs

    n_w, n_t = len(cur_w), len(cur_t)
    by_task: Dict[int, List[float]] = {}
    by_worker: Dict[int, List[float]] = {}
    for p in pairs:
        by_task.setdefault(p.task_id, []).append(p.quality.mean)
        by_worker.setdefault(p.worker_id, []).append(p.quality.mean)
    all_scores = [p.quality.mean for p in pairs]

    q_task = {tid: quality_distribution(PRED_WORKER, s) for tid, s in by_task.items()}
    q_worker = {wid: quality_distribution(PRED_TASK, s) for wid, s in by_worker.items()}
    q_both = quality_distribution(PRED_BOTH, all_scores)

    out = list(pairs)
    # predicted worker with current task
    if pred_w and cur_t:
        ts = [t for t in cur_t if t.id in q_task]
        out += _uncertain_pairs(pred_w, ts, now, C, B, PRED_WORKER,
                                lambda w, t: q_task[t.id],
                                lambda w, t: existence_probability(PRED_WORKER, len(by_task[t.id]), n_w, n_t))
    # current worker with predicted task
    if cur_w and pred_t:
        ws = [w for w in cur_w if w.id in q_worker]
        out += _uncertain_pairs(ws, pred_t, now, C, B, PRED_TASK,
                                lambda w, t: q_worker[w.id],
                                lambda w, t: existence_probability(PRED_TASK, len(by_worker[w.id]), n_w, n_t))
    if pred_w and pred_t:
        e = existence_probability(PRED_BOTH, len(all_scores), n_w, n_t)
        out += _uncertain_pairs(pred_w, pred_t, now, C, B, PRED_BOTH,
                                lambda w, t: q_both, lambda w, t: e)
    return out


def _exact_pairs(ws, ts, now, model, C, B) -> List[CandidatePair]:
    if not ws or not ts:
        return []
    dist = model.distance_matrix(ws, ts)
    ok = _reachable(ws, ts, now, dist) & (C * dist <= B)
    out = []
    for i, j in zip(*np.nonzero(ok)):
        w, t = ws[i], ts[j]
        c = UncertainScalar.exact(C * dist[i, j])
        q = UncertainScalar.exact(model.quality(w, t))
        out.append(CandidatePair(w.id, t.id, c, q, 1.0, w.predicted, t.predicted, t.loc))
    return out


def _uncertain_pairs(ws, ts, now, C, B, case, quality_of, existence_of) -> List[CandidatePair]:
    if not ws or not ts:
        return []
    wlo, whi = _boxes(ws)
    tlo, thi = _boxes(ts)
    mean, var, lb, ub = cost_moments_arrays(wlo[:, None, :], whi[:, None, :],
                                            tlo[None, :, :], thi[None, :, :], C)
    wxy = np.array([(w.loc.x, w.loc.y) for w in ws])
    txy = np.array([(t.loc.x, t.loc.y) for t in ts])
    center_dist = np.hypot(wxy[:, None, 0] - txy[None, :, 0], wxy[:, None, 1] - txy[None, :, 1])
    ok = _reachable(ws, ts, now, center_dist) & (mean <= B)
    out = []
    for i, j in zip(*np.nonzero(ok)):
        w, t = ws[i], ts[j]
        q = quality_of(w, t)
        e = existence_of(w, t)
        if q is None or e <= 0:
            continue
        c = UncertainScalar(MOMENTS, float(mean[i, j]), float(var[i, j]),
                            float(lb[i, j]), float(ub[i, j]))
        out.append(CandidatePair(w.id, t.id, c, q, e, w.predicted, t.predicted, t.loc))
    return out
