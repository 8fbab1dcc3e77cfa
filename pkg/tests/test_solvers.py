import math
import random

import pytest

from helpers import (
    appendix_pairs,
    exact_pair,
    milp_optimum,
    random_instance,
    table_pairs,
)
from mqa.core import Assignment, CandidatePair, UncertainScalar
from mqa.solvers import (
    BBNode,
    BBProblem,
    SizeGuardError,
    bb_compute_bound,
    bb_expand,
    bb_root,
    best_g,
    brute_force_oracle,
    budget_constrained_selection,
    cost_dnc,
    cost_dnc_derivative,
    decompose,
    dominates,
    finalize,
    merge,
    prob_dominates,
    select_best_pair,
    skyline,
    solve_bb,
    solve_dnc,
    solve_greedy,
    solve_random,
)

EXACT = (solve_bb, brute_force_oracle)
HEURISTIC = (solve_greedy, solve_dnc)


def keys(outcome):
    return sorted(outcome.assignment.keys)


def moments(mean, var):
    return UncertainScalar("moments", mean, var, 0.0, mean + 10)


class TestDominance:
    def test_examples(self):
        a, b = exact_pair(1, 1, 1, 3), exact_pair(2, 2, 3, 2)
        assert dominates(a, b) and not dominates(b, a)
        assert not dominates(a, a)
        assert not dominates(exact_pair(1, 1, 1, 1), exact_pair(2, 2, 3, 2))

    def test_prob_examples(self):
        a, b = exact_pair(1, 1, 1, 3), exact_pair(2, 2, 3, 2)
        assert prob_dominates(a, b)
        p = CandidatePair(1, 1, moments(2, 1), moments(3, 1))
        assert not prob_dominates(p, p)
        assert not prob_dominates(exact_pair(1, 1, 4, 3), b)

    def test_skyline_matches_pairwise_definition(self):
        rng = random.Random(8)
        for _ in range(150):
            pairs = []
            for k in range(rng.randint(1, 14)):
                cm, qm = rng.choice([1, 2, 3, 4]), rng.choice([1, 2, 3])
                cv, qv = rng.choice([0, 0, 0.5]), rng.choice([0, 0.5])
                c = UncertainScalar.exact(cm) if cv == 0 else moments(cm, cv)
                q = UncertainScalar.exact(qm) if qv == 0 else moments(qm, qv)
                pairs.append(CandidatePair(k, k, c, q))
            kept = {p.key for p in skyline(pairs)}
            want = {b.key for b in pairs
                    if not any(dominates(a, b) or prob_dominates(a, b) for a in pairs if a is not b)}
            assert kept == want

    def test_every_pruned_pair_has_a_kept_dominator(self):
        rng = random.Random(9)
        for _ in range(50):
            pairs = [exact_pair(k, k, rng.randint(0, 5), rng.randint(1, 5)) for k in range(12)]
            kept = skyline(pairs)
            for b in pairs:
                if b not in kept:
                    assert any(dominates(a, b) or prob_dominates(a, b) for a in kept)


class TestSelect:
    def test_single(self):
        p = exact_pair(1, 1, 2, 1)
        assert select_best_pair([p], 0, 10) is p

    def test_all_infeasible(self):
        assert select_best_pair([exact_pair(1, 1, 2, 1), exact_pair(2, 2, 1, 5)], 10, 10) is None

    def test_highest_exact_quality(self):
        ps = [exact_pair(1, 1, 1, 4), exact_pair(2, 2, 1, 3), exact_pair(3, 3, 1, 2)]
        assert select_best_pair(ps, 0, 10).quality.mean == 4

    def test_tie_breaks_on_cost_then_worker(self):
        ps = [exact_pair(3, 1, 2, 4), exact_pair(2, 2, 1, 4), exact_pair(1, 3, 1, 4)]
        assert select_best_pair(ps, 0, 10).key == (1, 3)


class TestAppendixTables:
    @pytest.mark.parametrize("solver", HEURISTIC + EXACT)
    def test_budget_nine(self, solver):
        out = solver(appendix_pairs(9), 9)
        assert out.total_quality == 9 and out.total_cost == 6
        assert keys(out) == [(1, 1), (2, 2), (3, 3)]

    @pytest.mark.parametrize("solver", EXACT)
    def test_budget_two_exact(self, solver):
        out = solver(appendix_pairs(9), 2)
        assert out.total_quality == 7 and keys(out) == [(1, 1), (2, 2)]

    @pytest.mark.parametrize("solver", HEURISTIC)
    def test_budget_two_heuristic(self, solver):
        out = solver(appendix_pairs(2), 2)
        assert out.total_quality >= 7 * 0.9 and out.total_cost <= 2

    @pytest.mark.parametrize("solver", HEURISTIC + EXACT + (solve_random,))
    def test_budget_zero(self, solver):
        out = solver(appendix_pairs(9), 0)
        assert out.total_quality == 0 and len(out.assignment) == 0

    def test_greedy_example1(self):
        d = {(1, 1): 1, (1, 2): 2}
        q = {(1, 1): 3, (1, 2): 2}
        out = solve_greedy(table_pairs(d, q, 100), 100)
        assert keys(out) == [(1, 1)] and out.total_quality == 3

    def test_empty(self):
        for solver in HEURISTIC + EXACT + (solve_random,):
            assert len(solver([], 5).assignment) == 0


class TestBranchAndBound:
    def test_root_bound(self):
        # rate order 4 > 3 > 0.8 > 2/3 > 0.5 > 1/3
        prob = BBProblem(appendix_pairs(9))
        assert bb_root(prob, 3).upper_bound == pytest.approx(7.8, abs=1e-12)

    def test_no_remaining_pairs(self):
        prob = BBProblem(appendix_pairs(9))
        node = BBNode(5.0, (), 10.0, 0.0, prob.m)
        assert bb_compute_bound(node, prob) == 5.0

    def test_expand_first_task(self):
        prob = BBProblem(appendix_pairs(9))
        children = bb_expand(bb_root(prob, 9), prob)
        assert [c.chosen for c in children] == [((1, 1),), ((2, 1),), ()]
        assert all(c.task_index == 1 for c in children)

    def test_expand_skips_unaffordable(self):
        prob = BBProblem(appendix_pairs(9))
        children = bb_expand(bb_root(prob, 2), prob)
        assert [c.chosen for c in children] == [((1, 1),), ()]

    def test_size_guard(self):
        pairs = [exact_pair(j, j, 1, 1) for j in range(25)]
        with pytest.raises(SizeGuardError):
            solve_bb(pairs, 10)
        assert solve_bb(pairs, 10, max_tasks=30).total_quality == 10

    def test_matches_integer_program(self):
        rng = random.Random(21)
        for _ in range(25):
            n, m = rng.randint(4, 9), rng.randint(4, 9)
            dist = {(i, j): round(rng.uniform(0, 5), 3) for i in range(1, n + 1)
                    for j in range(1, m + 1) if rng.random() < 0.6}
            if not dist:
                continue
            qual = {k: round(rng.uniform(1, 5), 3) for k in dist}
            B = rng.uniform(0, 15)
            pairs = table_pairs(dist, qual, 20)
            assert solve_bb(pairs, B).total_quality == pytest.approx(milp_optimum(pairs, B), abs=1e-6)

    def test_oracle_matches_integer_program(self):
        rng = random.Random(22)
        for _ in range(40):
            pairs, B = random_instance(rng)
            assert brute_force_oracle(pairs, B).total_quality == pytest.approx(
                milp_optimum(pairs, B), abs=1e-6)

    def test_monotone_in_budget(self):
        rng = random.Random(23)
        for _ in range(30):
            pairs, _ = random_instance(rng)
            qs = [solve_bb(pairs, B).total_quality for B in range(13)]
            assert all(b >= a - 1e-12 for a, b in zip(qs, qs[1:]))

    def test_zero_cost_pairs_count_in_bound(self):
        pairs = [exact_pair(1, 1, 0, 2), exact_pair(2, 2, 0, 3), exact_pair(3, 3, 1, 1)]
        prob = BBProblem(pairs)
        assert bb_root(prob, 0).upper_bound == 5
        assert solve_bb(pairs, 0).total_quality == 5


class TestHeuristics:
    @pytest.mark.parametrize("solver", HEURISTIC + (solve_random,))
    def test_feasible_and_not_above_optimum(self, solver):
        rng = random.Random(31)
        for _ in range(60):
            pairs, B = random_instance(rng)
            out = solver(pairs, B)
            out.assignment.check()
            assert out.total_cost <= B + 1e-9
            assert out.total_quality <= brute_force_oracle(pairs, B).total_quality + 1e-9

    def test_greedy_without_pruning_is_feasible(self):
        rng = random.Random(32)
        for _ in range(30):
            pairs, B = random_instance(rng)
            out = solve_greedy(pairs, B, prune=False)
            assert out.total_cost <= B + 1e-9

    def test_pruning_counters_nonnegative(self):
        out = solve_greedy(appendix_pairs(9), 3)
        assert all(v >= 0 for v in out.pairs_pruned.values())

    def test_pooled_budget_output_still_fits(self):
        out = solve_greedy(appendix_pairs(9), 3, b_max=6)
        assert out.total_cost <= 3

    def test_single_task_dnc_equals_greedy(self):
        d = {(1, 1): 1, (2, 1): 2, (3, 1): 0.5}
        q = {(1, 1): 3, (2, 1): 4, (3, 1): 1}
        pairs = table_pairs(d, q, 10)
        assert keys(solve_dnc(pairs, 10)) == keys(solve_greedy(pairs, 10))

    @pytest.mark.parametrize("g", [2, 3])
    def test_dnc_group_counts(self, g):
        assert solve_dnc(appendix_pairs(9), 9, g=g).total_quality == 9

    def test_random_is_seeded(self):
        pairs = appendix_pairs(9)
        assert keys(solve_random(pairs, 9, seed=4)) == keys(solve_random(pairs, 9, seed=4))


class TestFinalize:
    def test_drops_predicted_and_repairs(self):
        pred = CandidatePair(-1, 9, UncertainScalar.exact(0.5), UncertainScalar.exact(5),
                             worker_predicted=True)
        asg = Assignment([exact_pair(1, 1, 2, 2), exact_pair(2, 2, 2, 6), pred])
        out = finalize(asg, 2)
        assert sorted(out.keys) == [(2, 2)]


class TestDecompose:
    def test_singletons(self):
        pairs = [exact_pair(1, j, 1, 1, x=j / 10) for j in (1, 2, 3)]
        groups = decompose(pairs, 3)
        assert [[p.task_id for p in g] for g in groups] == [[1], [2], [3]]

    def test_rejects_g_one(self):
        with pytest.raises(ValueError):
            decompose([exact_pair(1, 1, 1, 1)], 1)

    def test_partition(self):
        rng = random.Random(4)
        pairs = [exact_pair(w, t, 1, 1, x=rng.random()) for w in range(4) for t in range(11)]
        # keep one location per task
        loc = {t: rng.random() for t in range(11)}
        pairs = [exact_pair(p.worker_id, p.task_id, 1, 1, x=loc[p.task_id]) for p in pairs]
        for g in (2, 3, 4, 20):
            groups = decompose(pairs, g)
            sets = [{p.task_id for p in grp} for grp in groups]
            assert set().union(*sets) == set(range(11))
            assert sum(len(s) for s in sets) == 11
            assert sum(len(grp) for grp in groups) == len(pairs)

    def test_sweep_order(self):
        pairs = [exact_pair(1, t, 1, 1, x=x) for t, x in [(1, 0.9), (2, 0.1), (3, 0.5), (4, 0.2)]]
        groups = decompose(pairs, 2)
        assert [sorted(p.task_id for p in grp) for grp in groups] == [[2, 4], [1, 3]]


class TestMerge:
    def test_disjoint_union(self):
        a, b = Assignment([exact_pair(1, 1, 1, 1)]), Assignment([exact_pair(2, 2, 1, 1)])
        assert sorted(merge(a, b, list(a), list(b)).keys) == [(1, 1), (2, 2)]

    def test_dominated_loser_reassigned(self):
        w1t1, w1t2 = exact_pair(1, 1, 1, 3), exact_pair(1, 2, 3, 1)
        w2t2, w3t2 = exact_pair(2, 2, 2, 2), exact_pair(3, 2, 2.5, 1.5)
        out = merge(Assignment([w1t1]), Assignment([w1t2]), [w1t1], [w1t2, w2t2, w3t2])
        assert sorted(out.keys) == [(1, 1), (2, 2)]

    def test_no_substitute(self):
        w1t1, w1t2 = exact_pair(1, 1, 1, 3), exact_pair(1, 2, 3, 1)
        out = merge(Assignment([w1t1]), Assignment([w1t2]), [w1t1], [w1t2])
        assert sorted(out.keys) == [(1, 1)]
        out.check()


class TestBudgetSelection:
    def test_within_budget_unchanged(self):
        rlt = [exact_pair(1, 1, 1, 3), exact_pair(2, 2, 1, 4)]
        assert sorted(budget_constrained_selection(rlt, 5).keys) == [(1, 1), (2, 2)]

    def test_zero_budget(self):
        assert len(budget_constrained_selection([exact_pair(1, 1, 1, 3)], 0)) == 0

    def test_appendix(self):
        rlt = [exact_pair(1, 1, 1, 3), exact_pair(2, 2, 1, 4), exact_pair(3, 3, 4, 2)]
        out = budget_constrained_selection(rlt, 3)
        assert sorted(out.keys) == [(1, 1), (2, 2)]
        assert out.total_cost_mean == 2 and out.total_quality_mean == 7


class TestCostModel:
    def test_hand_expanded_value(self):
        m, n, d, g = 8, 8, 2, 2
        f_d = 64 + (16 + 8) * 3           # log_2 8 = 3
        f_c = 2 * 7 * 4 / 1
        f_m = 2 * 4 * (8 * 3 - 2 * 7 / 1)
        f_b = 2 * 4 * 63 / 3
        assert cost_dnc(g, m, n, d) == pytest.approx(f_d + f_c + f_m + f_b, rel=1e-12)

    def test_single_task(self):
        assert cost_dnc(2, 1, 7, 3) == 7

    def test_zero_degree(self):
        m, n, g = 50, 40, 5
        f_d = m * n + (m * g + m) * math.log(m) / math.log(g)
        f_b = 2 * g * g * (m * m - 1) / (g * g - 1)
        assert cost_dnc(g, m, n, 0) == pytest.approx(f_d + f_b)

    def test_rejects_small_g(self):
        with pytest.raises(ValueError):
            cost_dnc(1, 5, 5, 1)

    def test_derivative_matches_finite_difference(self):
        rng = random.Random(3)
        for _ in range(100):
            m, n, d = rng.uniform(3, 3000), rng.uniform(1, 3000), rng.uniform(0, 20)
            g = rng.uniform(2.5, 60)
            h = 1e-5 * g
            fd = (cost_dnc(g + h, m, n, d) - cost_dnc(g - h, m, n, d)) / (2 * h)
            assert cost_dnc_derivative(g, m, n, d) == pytest.approx(fd, rel=1e-4, abs=1e-3)

    def test_best_g_small_cap(self):
        assert best_g(2, 5, 1) == 2
        assert best_g(3, 5, 0) >= 2

    def test_best_g_is_global_minimizer_below_cap(self):
        rng = random.Random(5)
        for _ in range(200):
            m, n, d = rng.randint(2, 4000), rng.randint(1, 4000), rng.uniform(0, 10)
            g = best_g(m, n, d)
            assert 2 <= g <= m
            vals = [cost_dnc(x, m, n, d) for x in range(2, min(m, 1024) + 1)]
            if g <= 1024:
                assert cost_dnc(g, m, n, d) <= min(vals) * (1 + 1e-12)

    def test_best_g_rejects_one_task(self):
        with pytest.raises(ValueError):
            best_g(1, 3, 1)
