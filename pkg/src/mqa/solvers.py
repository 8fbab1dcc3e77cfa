"""Assignment solvers over a list of candidate pairs.

Every solver takes the pairs produced by :func:`mqa.prediction.candidate_pairs`
(current and possibly predicted), a per-instance budget ``B`` and, for the
prediction-aware ones, a pooled budget ``b_max``.  Outputs contain current
pairs only and always fit in ``B``.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Assignment, CandidatePair
from .uncertainty import (
    budget_feasible_array,
    log_prob_greater_scores,
    prob_cost_less_equal,
    prob_quality_greater,
)

_EPS = 1e-9


class SizeGuardError(ValueError):
    """Raised when an exact method is asked to solve an oversized instance."""


@dataclass
class SolverOutcome:
    assignment: Assignment
    total_quality: float
    total_cost: float
    elapsed: float
    pairs_pruned: Counter = field(default_factory=Counter)

    @classmethod
    def of(cls, assignment: Assignment, started: float, counters: Counter) -> "SolverOutcome":
        return cls(assignment, assignment.total_quality_mean, assignment.total_cost_mean,
                   time.perf_counter() - started, counters)


# ---------------------------------------------------------------- pruning rules

def dominates(a: CandidatePair, b: CandidatePair) -> bool:
    """Interval dominance: ``a`` is surely cheaper and surely better."""
    return a.cost.ub < b.cost.lb and a.quality.lb > b.quality.ub


def prob_dominates(a: CandidatePair, b: CandidatePair) -> bool:
    return (prob_quality_greater(a.quality, b.quality) > 0.5
            and prob_cost_less_equal(a.cost, b.cost) > 0.5)


class _Table:
    """Column view of a pair list for vectorized filtering."""

    def __init__(self, pairs: Sequence[CandidatePair]):
        self.pairs = list(pairs)
        col = lambda f: np.array([f(p) for p in self.pairs], dtype=float)
        self.cm = col(lambda p: p.cost.mean)
        self.cv = col(lambda p: p.cost.variance)
        self.clb = col(lambda p: p.cost.lb)
        self.cub = col(lambda p: p.cost.ub)
        self.qm = col(lambda p: p.quality.mean)
        self.qv = col(lambda p: p.quality.variance)
        self.qlb = col(lambda p: p.quality.lb)
        self.qub = col(lambda p: p.quality.ub)
        self.ep = col(lambda p: p.existence_prob)
        self.wid = np.array([p.worker_id for p in self.pairs], dtype=np.int64)
        self.tid = np.array([p.task_id for p in self.pairs], dtype=np.int64)

    def __len__(self):
        return len(self.pairs)

    def all(self) -> np.ndarray:
        return np.nonzero(self.ep > 0)[0]


def _skyline(t: _Table, idx: np.ndarray, counters: Optional[Counter] = None) -> np.ndarray:
    """Pairs of ``idx`` dominated by no other pair of ``idx``.

    Interval dominance implies probabilistic dominance, and for normal
    comparisons the latter reduces to: strictly higher quality mean and a
    strictly lower cost mean (or a lower-or-equal one when both costs are
    exact).  A sort on quality plus running minima over cost finds them all.
    """
    if len(idx) <= 1:
        return idx
    qm, cm = t.qm[idx], t.cm[idx]
    zero = t.cv[idx] == 0
    order = np.argsort(-qm, kind="stable")
    qs, cs, zs = qm[order], cm[order], zero[order]
    run_min = np.minimum.accumulate(cs)
    run_min_zero = np.minimum.accumulate(np.where(zs, cs, np.inf))
    start = np.searchsorted(-qs, -qs, side="left")
    before = np.maximum(start - 1, 0)
    prior = np.where(start > 0, run_min[before], np.inf)
    prior_zero = np.where(start > 0, run_min_zero[before], np.inf)
    dominated = (prior < cs) | (zs & (prior_zero <= cs))
    if counters is not None and dominated.any():
        n_interval = int((_interval_dominated(t, idx) & dominated[np.argsort(order)]).sum())
        counters["dominance"] += n_interval
        counters["probability"] += int(dominated.sum()) - n_interval
    return idx[order[~dominated]]


def _interval_dominated(t: _Table, idx: np.ndarray) -> np.ndarray:
    qlb, cub = t.qlb[idx], t.cub[idx]
    order = np.argsort(-qlb, kind="stable")
    run_min = np.minimum.accumulate(cub[order])
    # number of pairs whose quality lb exceeds each pair's quality ub
    k = np.searchsorted(-qlb[order], -t.qub[idx], side="left")
    best = np.where(k > 0, run_min[np.maximum(k - 1, 0)], np.inf)
    return best < t.clb[idx]


def _select(t: _Table, idx: np.ndarray, committed_lb: float, b_max: float,
            delta: float) -> Optional[int]:
    if len(idx) == 0:
        return None
    feas = budget_feasible_array(committed_lb, t.cm[idx], t.cv[idx], b_max) > delta
    idx = idx[feas]
    if len(idx) == 0:
        return None
    score = log_prob_greater_scores(t.qm[idx], t.qv[idx])
    best = score.max()
    if np.isfinite(best):
        tied = idx[score >= best - 1e-12 * max(1.0, abs(best))]
    else:
        tied = idx
    pick = np.lexsort((t.tid[tied], t.wid[tied], t.cm[tied]))[0]
    return int(tied[pick])


def select_best_pair(candidates: Sequence[CandidatePair], committed_lb: float,
                     B_max: float, delta: float = 0.5) -> Optional[CandidatePair]:
    """Budget-confident candidate with the largest chance of beating all others."""
    t = _Table(candidates)
    k = _select(t, np.arange(len(t)), committed_lb, B_max, delta)
    return None if k is None else t.pairs[k]


def skyline(pairs: Sequence[CandidatePair]) -> List[CandidatePair]:
    t = _Table(pairs)
    return [t.pairs[k] for k in sorted(_skyline(t, np.arange(len(t))))]


# ---------------------------------------------------------------- greedy

def _greedy(t: _Table, idx: np.ndarray, b_max: float, delta: float, prune: bool,
            counters: Counter, trace: Optional[list] = None) -> Assignment:
    alive = np.zeros(len(t), dtype=bool)
    alive[idx] = True
    alive &= t.ep > 0
    asg = Assignment()
    committed = 0.0
    rounds = min(len(np.unique(t.wid[alive])), len(np.unique(t.tid[alive])))
    for _ in range(rounds):
        slack_ok = t.clb <= b_max - committed + _EPS
        counters["budget"] += int((alive & ~slack_ok).sum())
        cand = np.nonzero(alive & slack_ok)[0]
        if len(cand) == 0:
            break
        feas = budget_feasible_array(committed, t.cm[cand], t.cv[cand], b_max) > delta
        counters["confidence"] += int((~feas).sum())
        cand = cand[feas]
        if prune:
            cand = _skyline(t, cand, counters)
        k = _select(t, cand, committed, b_max, delta)
        if k is None:
            break
        pair = t.pairs[k]
        if trace is not None:
            trace.append(pair)
        asg.add(pair)
        committed += t.clb[k]
        alive &= (t.wid != pair.worker_id) & (t.tid != pair.task_id)
    return asg


def quality_rate(pair: CandidatePair) -> float:
    c = pair.cost.mean
    return pair.quality.mean / c if c != 0 else 1.0


def finalize(asg: Assignment, B: float, counters: Optional[Counter] = None) -> Assignment:
    """Keep current pairs only, then shed low-rate pairs until the cost fits ``B``."""
    out = Assignment(p for p in asg if p.is_current)
    while out.total_cost_mean > B + _EPS:
        worst = min((p for p in out if p.cost.mean > 0),
                    key=lambda p: (p.quality.mean / p.cost.mean, -p.cost.mean,
                                   p.worker_id, p.task_id))
        out.remove(worst)
        if counters is not None:
            counters["repair"] += 1
    return out


def solve_greedy(pairs: Sequence[CandidatePair], B: float, b_max: Optional[float] = None,
                 delta: float = 0.5, prune: bool = True,
                 trace: Optional[list] = None) -> SolverOutcome:
    started = time.perf_counter()
    b_max = B if b_max is None else b_max
    counters: Counter = Counter()
    t = _Table(pairs)
    asg = _greedy(t, t.all(), b_max, delta, prune, counters, trace)
    return SolverOutcome.of(finalize(asg, B, counters), started, counters)


# ---------------------------------------------------------------- divide and conquer

def cost_dnc(g: float, m_prime: float, n_prime: float, deg_t: float) -> float:
    """Modeled work of one divide-and-conquer run with ``g`` subproblems."""
    if g < 2:
        raise ValueError("g must be >= 2")
    if m_prime <= 1:
        return m_prime * n_prime
    L, lg = math.log(m_prime), math.log(g)
    d2 = deg_t * deg_t
    f_d = m_prime * n_prime + (m_prime * g + m_prime) * L / lg
    f_c = 2.0 * (m_prime - 1) * d2 / (g - 1)
    f_m = 2.0 * d2 * (m_prime * L / lg - g * (m_prime - 1) / (g - 1))
    f_b = 2.0 * g * g * (m_prime * m_prime - 1) / (g * g - 1)
    return f_d + f_c + f_m + f_b


def cost_dnc_derivative(g: float, m_prime: float, n_prime: float, deg_t: float) -> float:
    if m_prime <= 1:
        return 0.0
    L, lg = math.log(m_prime), math.log(g)
    first = m_prime * L * (g * lg - g - 1 - 2.0 * deg_t * deg_t) / (g * lg * lg)
    return first - 4.0 * g * (m_prime * m_prime - 1) / (g * g - 1) ** 2


def best_g(m_prime: float, n_prime: float, deg_t: float) -> int:
    """First integer where the modeled cost stops falling, capped at ``m_prime``.

    The sign change sits between ``g - 1`` and ``g``; the cheaper of the two
    is returned.
    """
    if m_prime < 2:
        raise ValueError("best_g needs at least two tasks")
    cap = int(math.floor(m_prime))
    g = 2
    while g <= cap and cost_dnc_derivative(g, m_prime, n_prime, deg_t) < 0:
        g += 1
    if g > cap:
        return cap
    if g > 2 and cost_dnc(g - 1, m_prime, n_prime, deg_t) <= cost_dnc(g, m_prime, n_prime, deg_t):
        return g - 1
    return g


def _task_groups(t: _Table, idx: np.ndarray, g: int) -> List[np.ndarray]:
    if g < 2:
        raise ValueError("g must be >= 2")
    locs: Dict[int, Tuple[float, float]] = {}
    for k in idx:
        p = t.pairs[k]
        if p.task_id not in locs:
            loc = p.task_loc
            locs[p.task_id] = (loc.x, loc.y) if loc is not None else (0.0, 0.0)
    sweep = sorted(locs, key=lambda tid: (locs[tid][0], locs[tid][1], tid))
    size = math.ceil(len(sweep) / g)
    remaining = sweep
    groups = []
    while remaining:
        ax, ay = locs[remaining[0]]
        rest = remaining[1:]
        d = [math.hypot(locs[r][0] - ax, locs[r][1] - ay) for r in rest]
        near = sorted(range(len(rest)), key=lambda k: d[k])[:size - 1]
        chosen = {remaining[0]} | {rest[k] for k in near}
        groups.append([r for r in remaining if r in chosen])
        remaining = [r for r in remaining if r not in chosen]
    tid = t.tid[idx]
    return [idx[np.isin(tid, grp)] for grp in groups]


def decompose(pairs: Sequence[CandidatePair], g: int) -> List[List[CandidatePair]]:
    """Split pairs into subproblems by sweeping over task locations."""
    t = _Table(pairs)
    return [[t.pairs[k] for k in grp] for grp in _task_groups(t, np.arange(len(t)), g)]


def _better(a: CandidatePair, b: CandidatePair, b_max: float, delta: float) -> CandidatePair:
    if dominates(a, b) or prob_dominates(a, b):
        return a
    if dominates(b, a) or prob_dominates(b, a):
        return b
    pick = select_best_pair([a, b], 0.0, b_max, delta)
    if pick is not None:
        return pick
    return max((a, b), key=lambda p: (p.quality.mean, -p.cost.mean))


def _merge(t: _Table, acc: Assignment, acc_pool: np.ndarray, part: Assignment,
           part_pool: np.ndarray, b_max: float, delta: float, counters: Counter) -> Assignment:
    while True:
        conflicts = [p.worker_id for p in part if acc.by_worker(p.worker_id) is not None]
        if not conflicts:
            break
        w = max(conflicts, key=lambda w: (part.by_worker(w).cost.mean, -w))
        pa, pb = acc.by_worker(w), part.by_worker(w)
        if _better(pa, pb, b_max, delta) is pa:
            side, pool, loser = part, part_pool, pb
        else:
            side, pool, loser = acc, acc_pool, pa
        side.remove(loser)
        counters["conflict"] += 1
        used = {p.worker_id for p in acc} | {p.worker_id for p in part}
        cand = pool[(t.tid[pool] == loser.task_id) & (t.ep[pool] > 0)
                    & ~np.isin(t.wid[pool], list(used))]
        if len(cand):
            committed = acc.total_cost_lb + part.total_cost_lb
            k = _select(t, _skyline(t, cand), committed, b_max, delta)
            if k is not None:
                side.add(t.pairs[k])
    return Assignment(list(acc) + list(part))


def merge(acc: Assignment, part: Assignment, acc_pool: Sequence[CandidatePair],
          part_pool: Sequence[CandidatePair], b_max: float = math.inf,
          delta: float = 0.5) -> Assignment:
    """Union of two subproblem answers with worker conflicts resolved.

    The pools are the candidate pairs of each side's subproblem; a task that
    loses its worker is offered to the best unused worker from its own pool.
    """
    t = _Table(list(acc_pool) + list(part_pool))
    na = len(acc_pool)
    return _merge(t, acc.copy(), np.arange(na), part.copy(), np.arange(na, len(t)),
                  b_max, delta, Counter())


def _dnc(t: _Table, idx: np.ndarray, b_max: float, delta: float, counters: Counter,
         g: Optional[int] = None) -> Assignment:
    tasks = np.unique(t.tid[idx])
    if len(tasks) <= 1:
        return _greedy(t, idx, b_max, delta, True, counters)
    m_prime = len(tasks)
    n_prime = len(np.unique(t.wid[idx]))
    if g is None:
        g = best_g(m_prime, n_prime, len(idx) / m_prime)
    acc, pool = None, None
    for grp in _task_groups(t, idx, g):
        part = _dnc(t, grp, b_max, delta, counters)
        if acc is None:
            acc, pool = part, grp
        else:
            acc = _merge(t, acc, pool, part, grp, b_max, delta, counters)
            pool = np.concatenate([pool, grp])
    return acc


def budget_constrained_selection(rlt: Sequence[CandidatePair], B_max: float,
                                 delta: float = 0.5) -> Assignment:
    """Greedy reselection from a conflict-free set when it overruns ``B_max``."""
    asg = Assignment(rlt)
    if asg.total_cost_ub <= B_max + _EPS:
        return asg
    t = _Table(rlt)
    return _greedy(t, t.all(), B_max, delta, True, Counter())


def solve_dnc(pairs: Sequence[CandidatePair], B: float, b_max: Optional[float] = None,
              delta: float = 0.5, g: Optional[int] = None) -> SolverOutcome:
    started = time.perf_counter()
    b_max = B if b_max is None else b_max
    counters: Counter = Counter()
    t = _Table(pairs)
    idx = t.all()
    asg = _dnc(t, idx, b_max, delta, counters, g) if len(idx) else Assignment()
    if asg.total_cost_ub > b_max + _EPS:
        asg = budget_constrained_selection(asg.pairs, b_max, delta)
    return SolverOutcome.of(finalize(asg, B, counters), started, counters)


# ---------------------------------------------------------------- branch and bound

@dataclass(frozen=True)
class BBNode:
    score: float
    chosen: Tuple[Tuple[int, int], ...]
    budget_left: float
    upper_bound: float
    task_index: int

    @property
    def used_workers(self) -> frozenset:
        return frozenset(w for w, _ in self.chosen)


class BBProblem:
    """Valid exact pairs indexed by task order (1-based) and by quality rate."""

    def __init__(self, pairs: Sequence[CandidatePair]):
        self.pairs = [p for p in pairs if p.is_current]
        self.task_ids = sorted({p.task_id for p in self.pairs})
        self.index_of = {tid: j + 1 for j, tid in enumerate(self.task_ids)}
        self.by_task: Dict[int, List[CandidatePair]] = {}
        for p in sorted(self.pairs, key=lambda p: p.worker_id):
            self.by_task.setdefault(p.task_id, []).append(p)
        # zero-cost pairs first: they never consume budget
        ranked = sorted(self.pairs, key=lambda p: (
            0 if p.cost.mean == 0 else 1,
            -(p.quality.mean / p.cost.mean) if p.cost.mean else -p.quality.mean,
            p.task_id, p.worker_id))
        self.by_rate = [(self.index_of[p.task_id], p.worker_id, p.quality.mean, p.cost.mean)
                        for p in ranked]
        self.lookup = {p.key: p for p in self.pairs}

    @property
    def m(self) -> int:
        return len(self.task_ids)


def bb_compute_bound(node: BBNode, problem: BBProblem) -> float:
    """Fractional-knapsack relaxation over unexploited tasks and free workers."""
    used = node.used_workers
    ub = node.score
    remain = node.budget_left
    for j, w, q, c in problem.by_rate:
        if j <= node.task_index or w in used:
            continue
        if c == 0:
            ub += q
        elif remain > c:
            ub += q
            remain -= c
        else:
            ub += q * (remain / c)
            break
    return ub


def bb_root(problem: BBProblem, B: float) -> BBNode:
    node = BBNode(0.0, (), float(B), 0.0, 0)
    return BBNode(0.0, (), float(B), bb_compute_bound(node, problem), 0)


def bb_expand(node: BBNode, problem: BBProblem) -> List[BBNode]:
    if node.task_index >= problem.m:
        raise ValueError("node has no task left to expand")
    j = node.task_index + 1
    tid = problem.task_ids[j - 1]
    used = node.used_workers
    out = []
    for p in problem.by_task.get(tid, []):
        c = p.cost.mean
        if p.worker_id in used or c > node.budget_left + _EPS:
            continue
        child = BBNode(node.score + p.quality.mean, node.chosen + (p.key,),
                       max(node.budget_left - c, 0.0), 0.0, j)
        out.append(BBNode(child.score, child.chosen, child.budget_left,
                          bb_compute_bound(child, problem), j))
    skip = BBNode(node.score, node.chosen, node.budget_left, 0.0, j)
    out.append(BBNode(skip.score, skip.chosen, skip.budget_left,
                      bb_compute_bound(skip, problem), j))
    return out


def solve_bb(pairs: Sequence[CandidatePair], B: float, max_tasks: int = 20,
             trace: Optional[list] = None) -> SolverOutcome:
    """Exact best-first branch and bound with a greedy dive.

    ``trace`` collects every node taken from the heap or reached by diving.
    """
    started = time.perf_counter()
    counters: Counter = Counter()
    problem = BBProblem(pairs)
    if problem.m > max_tasks:
        raise SizeGuardError(f"branch and bound capped at {max_tasks} tasks, got {problem.m}")
    best_score, best = -1.0, None
    order = itertools.count()
    key = lambda n: (-n.upper_bound, -n.score, -n.task_index, next(order))
    root = bb_root(problem, B)
    heap = [(key(root), root)]
    while heap:
        _, node = heapq.heappop(heap)
        if trace is not None:
            trace.append(node)
        if node.upper_bound <= best_score:
            counters["bound"] += 1
            continue
        while node.task_index < problem.m:
            children = bb_expand(node, problem)
            survivors = [c for c in children if c.upper_bound > best_score]
            counters["bound"] += len(children) - len(survivors)
            if not survivors:
                break
            keyed = sorted((key(c), c) for c in survivors)
            for item in keyed[1:]:
                heapq.heappush(heap, item)
            node = keyed[0][1]
            if trace is not None:
                trace.append(node)
        if node.score > best_score:
            best_score, best = node.score, node
    asg = Assignment(problem.lookup[k] for k in (best.chosen if best else ()))
    return SolverOutcome.of(finalize(asg, B, counters), started, counters)


# ---------------------------------------------------------------- baselines and oracle

def solve_random(pairs: Sequence[CandidatePair], B: float, rng: Optional[random.Random] = None,
                 b_max: Optional[float] = None, seed: int = 0) -> SolverOutcome:
    started = time.perf_counter()
    rng = random.Random(seed) if rng is None else rng
    b_max = B if b_max is None else b_max
    order = sorted((p for p in pairs if p.existence_prob > 0), key=lambda p: p.key)
    rng.shuffle(order)
    asg = Assignment()
    spent = 0.0
    for p in order:
        if asg.can_add(p) and spent + p.cost.mean <= b_max + _EPS:
            asg.add(p)
            spent += p.cost.mean
    counters: Counter = Counter()
    return SolverOutcome.of(finalize(asg, B, counters), started, counters)


def brute_force_oracle(pairs: Sequence[CandidatePair], B: float,
                       max_states: int = 10 ** 7) -> SolverOutcome:
    """Exhaustive search over conflict-free subsets of current pairs.

    Ties on quality go to the cheaper assignment.
    """
    started = time.perf_counter()
    current = [p for p in pairs if p.is_current]
    task_ids = sorted({p.task_id for p in current})
    n_workers = len({p.worker_id for p in current})
    if (n_workers + 1) ** len(task_ids) > max_states:
        raise SizeGuardError("instance too large for exhaustive enumeration")
    options = {tid: sorted((p for p in current if p.task_id == tid), key=lambda p: p.worker_id)
               for tid in task_ids}
    best = [(-1.0, 0.0), ()]

    def walk(j, used, left, score, cost, chosen):
        if j == len(task_ids):
            if (score, -cost) > best[0]:
                best[0], best[1] = (score, -cost), chosen
            return
        walk(j + 1, used, left, score, cost, chosen)
        for p in options[task_ids[j]]:
            c = p.cost.mean
            if p.worker_id not in used and c <= left + _EPS:
                walk(j + 1, used | {p.worker_id}, left - c, score + p.quality.mean,
                     cost + c, chosen + (p,))

    walk(0, frozenset(), float(B), 0.0, 0.0, ())
    return SolverOutcome.of(Assignment(best[1]), started, Counter())


SOLVERS = ("greedy", "dnc", "random", "bb")
