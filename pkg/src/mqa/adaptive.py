"""Decide whether to assign now or wait one instance.

Two tests are combined with OR: a quality test comparing "solve now, then
solve the leftovers next time" against "solve everything together next
time", and an efficiency test comparing the modeled solver work of the two
schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

from .solvers import best_g, cost_dnc

GREEDY = "greedy"
DNC = "dnc"

# (existence probability, quality mean) of an entity's best partner
Term = Tuple[float, float]


@dataclass
class TimingInputs:
    n_workers_now: int
    n_tasks_now: int
    n_workers_next: float
    n_tasks_next: float
    opt_size: int
    worker_terms_now: Sequence[Term] = field(default_factory=list)
    worker_terms_next: Sequence[Term] = field(default_factory=list)
    task_terms_now: Sequence[Term] = field(default_factory=list)
    task_terms_next: Sequence[Term] = field(default_factory=list)
    solver: str = GREEDY
    deg_t: float = 0.0

    def __post_init__(self):
        if min(self.n_workers_now, self.n_tasks_now, self.n_workers_next,
               self.n_tasks_next, self.opt_size) < 0:
            raise ValueError("counts must be nonnegative")
        if self.opt_size > min(self.n_workers_now, self.n_tasks_now):
            raise ValueError("assignment larger than the smaller side")
        if self.solver not in (GREEDY, DNC):
            raise ValueError(f"unknown solver kind {self.solver!r}")

    @property
    def p_worker(self) -> float:
        return self.opt_size / self.n_workers_now if self.n_workers_now else 1.0

    @property
    def p_task(self) -> float:
        return self.opt_size / self.n_tasks_now if self.n_tasks_now else 1.0

    def leftover_sizes(self) -> Tuple[float, float]:
        w = (1.0 - self.p_worker) * self.n_workers_now + self.n_workers_next
        t = (1.0 - self.p_task) * self.n_tasks_now + self.n_tasks_next
        return w, t

    def combined_sizes(self) -> Tuple[float, float]:
        return self.n_workers_now + self.n_workers_next, self.n_tasks_now + self.n_tasks_next


def _weighted(terms: Sequence[Term], weight: float) -> float:
    return weight * sum(p * q for p, q in terms)


def estimate_q_combined(inputs: TimingInputs) -> float:
    """Estimated best quality over current and predicted entities together."""
    n_w, n_t = inputs.combined_sizes()
    if n_w <= n_t:
        return (_weighted(inputs.worker_terms_now, 1.0)
                + _weighted(inputs.worker_terms_next, inputs.p_worker))
    return (_weighted(inputs.task_terms_now, 1.0)
            + _weighted(inputs.task_terms_next, inputs.p_task))


def estimate_q_next(inputs: TimingInputs) -> float:
    """Estimated best quality next instance over what is left after assigning now."""
    n_w, n_t = inputs.leftover_sizes()
    if n_w <= n_t:
        return (_weighted(inputs.worker_terms_now, 1.0 - inputs.p_worker)
                + _weighted(inputs.worker_terms_next, 1.0))
    return (_weighted(inputs.task_terms_now, 1.0 - inputs.p_task)
            + _weighted(inputs.task_terms_next, 1.0))


def estimate_q_now(inputs: TimingInputs) -> float:
    """Fast stand-in for the quality a solver would realize on current entities."""
    if inputs.n_workers_now <= inputs.n_tasks_now:
        return _weighted(inputs.worker_terms_now, 1.0)
    return _weighted(inputs.task_terms_now, 1.0)


def quality_timing_condition(inputs: TimingInputs, q_now: float) -> bool:
    return q_now + estimate_q_next(inputs) > estimate_q_combined(inputs)


def cost_greedy_estimate(m: float, n: float) -> float:
    """Modeled greedy work for ``m`` tasks and ``n`` workers."""
    if m < 0 or n < 0:
        raise ValueError("sizes must be nonnegative")
    h = min(m, n)
    mn = m * n
    return mn + h * (3 * mn * mn + m + n) + h


def _work(solver: str, n_workers: float, n_tasks: float, deg_t: float) -> float:
    if solver == GREEDY:
        return cost_greedy_estimate(n_tasks, n_workers)
    if n_tasks < 2:
        return n_tasks * n_workers
    g = best_g(n_tasks, n_workers, deg_t)
    return cost_dnc(g, n_tasks, n_workers, deg_t)


def efficiency_timing_condition(inputs: TimingInputs) -> bool:
    now = _work(inputs.solver, inputs.n_workers_now, inputs.n_tasks_now, inputs.deg_t)
    nxt = _work(inputs.solver, *inputs.leftover_sizes(), inputs.deg_t)
    both = _work(inputs.solver, *inputs.combined_sizes(), inputs.deg_t)
    return now + nxt < both


def should_run_now(inputs: TimingInputs, q_now: float) -> bool:
    return quality_timing_condition(inputs, q_now) or efficiency_timing_condition(inputs)


def best_partner_terms(pairs, side: str) -> List[Term]:
    """Per entity, (existence, quality mean) of its highest-quality pair.

    ``side`` is "worker" or "task"; results are in ascending id order.
    """
    best = {}
    for p in pairs:
        k = p.worker_id if side == "worker" else p.task_id
        cur = best.get(k)
        if cur is None or p.quality.mean > cur[1]:
            best[k] = (p.existence_prob, p.quality.mean)
    return [best[k] for k in sorted(best)]
