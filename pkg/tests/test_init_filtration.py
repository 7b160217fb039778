import itertools

import numpy as np
import pytest

from treeshrink.init_filtration import (ScenarioMatrix, ffs_init, ffs_objective,
                                        kmeans_init, merge_prefixes, random_init)
from treeshrink.tree import ScenarioTree, fan_tree


def matrix_from_values(values, probs=None, t_levels=2):
    """1-d scenarios constant after stage 0: path = (0, v, v, ...)."""
    values = np.asarray(values, dtype=float)
    s = values.shape[0]
    paths = np.zeros((s, t_levels, 1))
    for t in range(1, t_levels):
        paths[:, t, 0] = values
    probs = np.full(s, 1.0 / s) if probs is None else np.asarray(probs, float)
    return ScenarioMatrix(paths, probs)


class TestKmeans:
    def test_k_equals_s_preserves_scenarios(self):
        sm = matrix_from_values([0.0, 2.0, 5.0, 9.0], [0.1, 0.2, 0.3, 0.4])
        t = kmeans_init(sm, 4, seed=0)
        assert t.validate() == []
        leaf_vals = sorted(t.quantizer[t.leaves(), 0])
        assert leaf_vals == pytest.approx([0.0, 2.0, 5.0, 9.0])
        got = {round(float(t.quantizer[l, 0]), 9): float(t.prob[l]) for l in t.leaves()}
        assert got[2.0] == pytest.approx(0.2)

    def test_k_one_weighted_mean(self):
        sm = matrix_from_values([0.0, 10.0], [0.25, 0.75])
        t = kmeans_init(sm, 1, seed=0)
        assert t.quantizer[int(t.leaves()[0]), 0] == pytest.approx(7.5)
        assert t.prob[int(t.leaves()[0])] == pytest.approx(1.0)

    def test_two_well_separated_clusters(self):
        sm = matrix_from_values([0.0, 0.1, 10.0, 10.1])
        t = kmeans_init(sm, 2, seed=0)
        centers = sorted(t.quantizer[t.leaves(), 0])
        assert centers == pytest.approx([0.05, 10.05])
        assert sorted(t.prob[t.leaves()]) == pytest.approx([0.5, 0.5])

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(0)
        sm = ScenarioMatrix(rng.normal(size=(30, 4, 2)), np.full(30, 1 / 30))
        t1 = kmeans_init(sm, 5, seed=3)
        t2 = kmeans_init(sm, 5, seed=3)
        assert np.array_equal(t1.quantizer, t2.quantizer)
        assert np.array_equal(t1.prob, t2.prob)

    def test_output_valid(self):
        rng = np.random.default_rng(1)
        sm = ScenarioMatrix(rng.normal(size=(40, 5, 2)),
                            rng.dirichlet(np.ones(40)))
        assert kmeans_init(sm, 7, seed=0).validate() == []

    def test_k_out_of_range(self):
        sm = matrix_from_values([0.0, 1.0])
        with pytest.raises(ValueError):
            kmeans_init(sm, 3)


class TestFfs:
    def test_k_equals_s_keeps_fan(self):
        sm = matrix_from_values([0.0, 3.0, 8.0], [0.2, 0.5, 0.3])
        t = ffs_init(sm, 3)
        assert t.validate() == []
        assert sorted(t.quantizer[t.leaves(), 0]) == pytest.approx([0.0, 3.0, 8.0])
        got = {round(float(t.quantizer[l, 0]), 9): float(t.prob[l]) for l in t.leaves()}
        assert got[3.0] == pytest.approx(0.5)

    def test_three_point_example(self):
        # candidate scores with squared cost: 101/3, 82/3, 181/3 -> picks 1
        sm = matrix_from_values([0.0, 1.0, 10.0])
        t = ffs_init(sm, 1)
        assert t.quantizer[int(t.leaves()[0]), 0] == pytest.approx(1.0)
        assert t.prob[int(t.leaves()[0])] == pytest.approx(1.0)

    def test_greedy_steps_match_exhaustive_step_search(self):
        # Every greedy pick must minimize the one-step objective evaluated by
        # direct enumeration over all remaining candidates.
        rng = np.random.default_rng(2)
        for _ in range(20):
            s = int(rng.integers(2, 7))
            sm = ScenarioMatrix(rng.uniform(-5, 5, (s, 3, 1)),
                                rng.dirichlet(np.ones(s)))
            flat = sm.flat()
            cost = np.sum((flat[:, None, :] - flat[None, :, :]) ** 2, axis=2)
            selected = []
            for _step in range(s - 1):
                best_u, best_val = None, np.inf
                for u in range(s):
                    if u in selected:
                        continue
                    cand = selected + [u]
                    rest = [j for j in range(s) if j not in cand]
                    val = sum(sm.prob[j] * min(cost[j, i] for i in cand)
                              for j in rest)
                    if val < best_val - 1e-12:
                        best_u, best_val = u, val
                selected.append(best_u)
                t = ffs_init(sm, len(selected))
                got = sorted(t.quantizer[t.leaves(), 0])
                want = sorted(flat[selected][:, 2])  # leaves carry stage-2 values
                assert got == pytest.approx(want)

    def test_k_s_minus_one_matches_subset_search(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            s = int(rng.integers(3, 7))
            sm = ScenarioMatrix(rng.uniform(-5, 5, (s, 2, 1)),
                                rng.dirichlet(np.ones(s)))
            t = ffs_init(sm, s - 1)
            got = sorted(np.round(t.quantizer[t.leaves(), 0], 9))
            best_subset, best_val = None, np.inf
            for subset in itertools.combinations(range(s), s - 1):
                val = ffs_objective(sm, list(subset))
                if val < best_val - 1e-12:
                    best_subset, best_val = subset, val
            want = sorted(np.round(sm.paths[list(best_subset), 1, 0], 9))
            assert got == pytest.approx(want)

    def test_objective_nonincreasing_in_k(self):
        rng = np.random.default_rng(4)
        sm = ScenarioMatrix(rng.uniform(-5, 5, (12, 3, 2)),
                            rng.dirichlet(np.ones(12)))
        tail = sm.paths[:, 1:, :].reshape(12, -1)  # fan branches copy these
        prev = np.inf
        for k in range(1, 13):
            t = ffs_init(sm, k)
            chains = t.path_values()[:, 1:, :].reshape(len(t.leaves()), -1)
            sel = sorted(int(np.flatnonzero(np.all(tail == row, axis=1))[0])
                         for row in chains)
            val = ffs_objective(sm, sel)
            assert val <= prev + 1e-9
            prev = val

    def test_redistribution_mass_conserved(self):
        rng = np.random.default_rng(5)
        sm = ScenarioMatrix(rng.uniform(-3, 3, (10, 3, 1)),
                            rng.dirichlet(np.ones(10)))
        t = ffs_init(sm, 4)
        assert t.validate() == []
        assert t.prob[t.leaves()].sum() == pytest.approx(1.0, abs=1e-12)


class TestRandomInit:
    def test_structure(self):
        t = random_init([2, 2, 2], seed=0)
        assert t.n_nodes == 15
        assert len(t.leaves()) == 8
        assert t.validate() == []

    def test_seed_reproducibility(self):
        t1 = random_init([3, 2], dim=2, seed=9)
        t2 = random_init([3, 2], dim=2, seed=9)
        assert np.array_equal(t1.quantizer, t2.quantizer)
        assert np.array_equal(t1.prob, t2.prob)

    def test_probabilities_random_but_valid(self):
        t = random_init([4, 3], seed=1)
        assert t.validate() == []
        kids = t.prob[t.children(0)]
        assert not np.allclose(kids, kids[0])  # not uniform

    def test_range(self):
        t = random_init([2, 2], value_range=(3.0, 4.0), seed=2)
        assert t.quantizer.min() >= 3.0 and t.quantizer.max() <= 4.0


class TestMergePrefixes:
    def test_fan_with_shared_prefix(self):
        paths = np.array([
            [[0.0], [1.0], [2.0]],
            [[0.0], [1.0], [3.0]],
            [[0.0], [4.0], [5.0]],
        ])
        t = fan_tree(paths, np.array([0.25, 0.25, 0.5]))
        merged = merge_prefixes(t)
        assert merged.validate() == []
        # stage-1 nodes 1.0 and 4.0 only
        assert sorted(merged.quantizer[merged.stage_nodes(1), 0]) == \
            pytest.approx([1.0, 4.0])
        node_one = [n for n in merged.stage_nodes(1)
                    if merged.quantizer[n, 0] == 1.0][0]
        assert merged.prob[node_one] == pytest.approx(0.5)
        assert merged.n_children(node_one) == 2

    def test_no_merge_when_distinct(self):
        paths = np.array([[[0.0], [1.0]], [[0.0], [2.0]]])
        t = fan_tree(paths, np.array([0.5, 0.5]))
        merged = merge_prefixes(t)
        assert merged.n_nodes == t.n_nodes

    def test_tolerance(self):
        paths = np.array([[[0.0], [1.0], [0.0]], [[0.0], [1.0 + 1e-7], [1.0]]])
        t = fan_tree(paths, np.array([0.5, 0.5]))
        assert merge_prefixes(t, tol=0.0).stage_nodes(1).shape[0] == 2
        assert merge_prefixes(t, tol=1e-6).stage_nodes(1).shape[0] == 1
