"""Shared fixtures: the worked-example tables and a random instance maker."""

import random

import numpy as np

from mqa.core import CandidatePair, Location, TablePairModel, Task, UncertainScalar, Worker
from mqa.harness import ArrivalStream
from mqa.prediction import candidate_pairs

# three workers, three tasks, "/" entries omitted
APPENDIX_Q = {(1, 1): 3, (1, 2): 1, (2, 1): 2, (2, 2): 4, (2, 3): 4, (3, 3): 2}
APPENDIX_D = {(1, 1): 1, (1, 2): 3, (2, 1): 3, (2, 2): 1, (2, 3): 5, (3, 3): 4}

# two-instance example: w1, t1, t2 first; w2, w3, t3 next
TABLE1_D = {(1, 1): 1, (1, 2): 2, (1, 3): 4, (2, 1): 1, (2, 2): 3, (2, 3): 2,
            (3, 1): 5, (3, 2): 3, (3, 3): 1}
TABLE1_Q = {(1, 1): 3, (1, 2): 2, (1, 3): 2, (2, 1): 4, (2, 2): 2, (2, 3): 1,
            (3, 1): 2, (3, 2): 1, (3, 3): 2}


def table_pairs(dist, qual, B, C=1.0, now=0, deadline=100.0):
    """Valid pairs for a table-defined instance (locations are irrelevant)."""
    workers = sorted({w for w, _ in dist})
    tasks = sorted({t for _, t in dist})
    ws = [Worker(i, Location(0.5, 0.5), 1.0) for i in workers]
    ts = [Task(j, Location(j / (len(tasks) + 1), 0.5), deadline) for j in tasks]
    return candidate_pairs(ws, ts, now, TablePairModel(dist, qual), C, B)


def appendix_pairs(B):
    return table_pairs(APPENDIX_D, APPENDIX_Q, B)


def example2_stream():
    here = Location(0.5, 0.5)
    workers = [[Worker(1, here, 0.4, 1)], [Worker(2, here, 0.4, 2), Worker(3, here, 0.4, 2)]]
    tasks = [[Task(1, here, 20, 1), Task(2, here, 20, 1)], [Task(3, here, 20, 2)]]
    return ArrivalStream(workers, tasks, TablePairModel(TABLE1_D, TABLE1_Q))


def exact_pair(w, t, c, q, x=0.0):
    return CandidatePair(w, t, UncertainScalar.exact(c), UncertainScalar.exact(q),
                         task_loc=Location(x, 0.0))


def random_instance(rng: random.Random):
    """n, m in [1, 6], B in [0, 12], C = 1; each pair valid with probability 0.7."""
    n, m = rng.randint(1, 6), rng.randint(1, 6)
    B = rng.randint(0, 12)
    dist, qual = {}, {}
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if rng.random() < 0.7:
                dist[(i, j)] = round(rng.uniform(0, 6), 2)
                qual[(i, j)] = round(rng.uniform(1, 5), 2)
    if not dist:
        dist[(1, 1)], qual[(1, 1)] = 1.0, 1.0
    return table_pairs(dist, qual, B), B


def milp_optimum(pairs, B):
    """Exact optimum by integer programming, independent of the search code."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    pairs = [p for p in pairs if p.is_current]
    if not pairs:
        return 0.0
    ws = sorted({p.worker_id for p in pairs})
    ts = sorted({p.task_id for p in pairs})
    k = len(pairs)
    rows = []
    for w in ws:
        rows.append([1.0 if p.worker_id == w else 0.0 for p in pairs])
    for t in ts:
        rows.append([1.0 if p.task_id == t else 0.0 for p in pairs])
    A = np.array(rows + [[p.cost.mean for p in pairs]])
    ub = np.array([1.0] * (len(ws) + len(ts)) + [B + 1e-9])
    res = milp(-np.array([p.quality.mean for p in pairs]),
               constraints=LinearConstraint(A, -np.inf, ub),
               integrality=np.ones(k), bounds=Bounds(0, 1))
    if not res.success:
        raise RuntimeError(res.message)
    return -res.fun


# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE = {}


def report(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
