import json

import numpy as np
import pytest

from treeshrink import tree as tr
from treeshrink.tree import (ScenarioTree, TreeFormatError, TreeValidationError,
                             ZeroProbabilityError, fan_tree, generate_random,
                             load_csv, path_cost, path_cost_table)


def single_node_tree():
    return ScenarioTree([-1], [0], [[0.0]], [1.0])


def two_leaf_tree(p1=0.5, p2=0.5, root_prob=1.0):
    return ScenarioTree([-1, 0, 0], [0, 1, 1], [[0.0], [1.0], [2.0]],
                        [root_prob, p1, p2])


class TestValidate:
    def test_single_node_tree_valid(self):
        assert single_node_tree().validate() == []

    def test_half_half_valid(self):
        assert two_leaf_tree(0.5, 0.5).validate() == []

    def test_mass_mismatch_flagged_at_root(self):
        violations = two_leaf_tree(0.6, 0.6).validate()
        assert len(violations) >= 1
        assert any(v.startswith("node 0") for v in violations)

    def test_negative_prob_flagged(self):
        violations = two_leaf_tree(1.2, -0.2).validate()
        assert any("negative" in v for v in violations)

    def test_two_roots_flagged(self):
        t = ScenarioTree([-1, -1, 0, 1], [0, 0, 1, 1], np.zeros((4, 1)),
                         [0.5, 0.5, 0.5, 0.5])
        assert any("root" in v for v in t.validate())

    def test_ragged_leaf_stages_flagged(self):
        t = ScenarioTree([-1, 0, 0, 1], [0, 1, 1, 2], np.zeros((4, 1)),
                         [1.0, 0.5, 0.5, 0.5])
        assert any("leaf" in v for v in t.validate())

    def test_stage_sums_telescope(self):
        t = generate_random(4, 3, dim=2, seed=3)
        assert t.validate() == []
        for s in range(t.T + 1):
            assert np.isclose(t.prob[t.stage_nodes(s)].sum(), 1.0, atol=1e-12)


class TestConditionalProb:
    def test_ratio(self):
        t = ScenarioTree([-1, 0, 1, 1], [0, 1, 2, 2], np.zeros((4, 1)),
                         [1.0, 0.5, 0.25, 0.25])
        assert t.conditional_prob(2, 1) == pytest.approx(0.5)

    def test_only_child_is_one(self):
        t = ScenarioTree([-1, 0], [0, 1], np.zeros((2, 1)), [1.0, 1.0])
        assert t.conditional_prob(1, 0) == pytest.approx(1.0)

    def test_zero_mass_ancestor_raises(self):
        t = ScenarioTree([-1, 0, 0, 1], [0, 1, 1, 2], np.zeros((4, 1)),
                         [1.0, 0.0, 1.0, 0.0])
        with pytest.raises(ZeroProbabilityError):
            t.conditional_prob(3, 1)

    def test_non_ancestor_raises(self):
        t = two_leaf_tree()
        with pytest.raises(ValueError):
            t.conditional_prob(1, 2)


class TestPathCost:
    def test_identical_paths_zero(self):
        t = generate_random(3, 2, seed=0)
        leaf = int(t.leaves()[0])
        assert path_cost(t, leaf, t, leaf) == 0.0

    def test_single_stage_difference(self):
        a = ScenarioTree([-1, 0], [0, 1], [[0.0], [0.0]], [1.0, 1.0])
        b = ScenarioTree([-1, 0], [0, 1], [[0.0], [3.0]], [1.0, 1.0])
        assert path_cost(a, 1, b, 1) == pytest.approx(9.0)

    def test_two_paths_one_coordinate_off(self):
        a = ScenarioTree([-1, 0], [0, 1], [[0.0], [1.0]], [1.0, 1.0])
        b = ScenarioTree([-1, 0], [0, 1], [[0.0], [2.0]], [1.0, 1.0])
        assert path_cost(a, 1, b, 1) == pytest.approx(1.0)

    def test_symmetry(self):
        a = generate_random(3, 2, dim=2, seed=1)
        b = generate_random(3, 3, dim=2, seed=2)
        la, lb = int(a.leaves()[2]), int(b.leaves()[5])
        assert path_cost(a, la, b, lb) == pytest.approx(path_cost(b, lb, a, la))

    def test_dimension_mismatch_raises(self):
        a = generate_random(2, 2, dim=1, seed=0)
        b = generate_random(2, 2, dim=2, seed=0)
        with pytest.raises(ValueError):
            path_cost(a, int(a.leaves()[0]), b, int(b.leaves()[0]))

    def test_table_matches_scalar(self):
        a = generate_random(2, 2, dim=2, seed=4)
        b = generate_random(2, 3, dim=2, seed=5)
        table = path_cost_table(a, b)
        for i, la in enumerate(a.leaves()):
            for j, lb in enumerate(b.leaves()):
                assert table[i, j] == pytest.approx(path_cost(a, int(la), b, int(lb)))

    def test_non_quadratic_order(self):
        a = ScenarioTree([-1, 0], [0, 1], [[0.0], [0.0]], [1.0, 1.0])
        b = ScenarioTree([-1, 0], [0, 1], [[0.0], [2.0]], [1.0, 1.0])
        assert path_cost(a, 1, b, 1, order=1) == pytest.approx(2.0)
        assert path_cost_table(a, b, order=1)[0, 0] == pytest.approx(2.0)


class TestGenerateRandom:
    def test_published_tree_sizes(self):
        t = generate_random(7, 5, seed=0)
        assert len(t.leaves()) == 78125
        assert t.n_nodes == 97656
        small = generate_random(3, 6, seed=0)
        assert len(small.leaves()) == 216
        assert small.n_nodes == 259

    def test_chain(self):
        t = generate_random(1, 1, seed=0)
        assert t.n_nodes == 2
        assert t.prob[int(t.leaves()[0])] == pytest.approx(1.0)

    def test_seed_reproducibility(self):
        t1 = generate_random(3, 3, dim=2, seed=42)
        t2 = generate_random(3, 3, dim=2, seed=42)
        assert np.array_equal(t1.quantizer, t2.quantizer)
        assert np.array_equal(t1.prob, t2.prob)
        t3 = generate_random(3, 3, dim=2, seed=43)
        assert not np.array_equal(t1.quantizer, t3.quantizer)

    def test_quantizer_range(self):
        t = generate_random(2, 4, dim=3, value_range=(-2.0, 2.0), seed=1)
        assert t.quantizer.min() >= -2.0 and t.quantizer.max() <= 2.0

    def test_valid(self):
        assert generate_random(4, 5, seed=9).validate() == []


class TestSerialization:
    def test_round_trip(self, tmp_path):
        t = generate_random(3, 3, dim=2, seed=7)
        path = tmp_path / "tree.json"
        t.save(path)
        back = ScenarioTree.load(path)
        assert np.array_equal(t.parent, back.parent)
        assert np.array_equal(t.stage, back.stage)
        assert np.array_equal(t.quantizer, back.quantizer)
        assert np.array_equal(t.prob, back.prob)
        assert back.validate() == []

    def test_bad_mass_rejected(self, tmp_path):
        doc = {"T": 1, "d": 1, "nodes": [
            {"id": 0, "parent": None, "quantizer": [0.0], "prob": 0.9},
            {"id": 1, "parent": 0, "quantizer": [1.0], "prob": 0.5},
            {"id": 2, "parent": 0, "quantizer": [2.0], "prob": 0.4},
        ]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeValidationError):
            ScenarioTree.load(path)

    def test_two_roots_rejected(self, tmp_path):
        doc = {"T": 1, "d": 1, "nodes": [
            {"id": 0, "parent": None, "quantizer": [0.0], "prob": 0.5},
            {"id": 1, "parent": None, "quantizer": [1.0], "prob": 0.5},
        ]}
        path = tmp_path / "two_roots.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(TreeValidationError):
            ScenarioTree.load(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(TreeFormatError):
            ScenarioTree.load(path)


class TestCsvIngestion:
    def test_fan_tree_from_csv(self, tmp_path):
        path = tmp_path / "scen.csv"
        path.write_text(
            "prob,x0,x1,x2\n"
            "0.25,0.0,1.0,2.0\n"
            "0.75,0.0,3.0,4.0\n")
        t = load_csv(path, dim=1)
        assert t.validate() == []
        assert t.T == 2
        assert len(t.leaves()) == 2
        assert t.quantizer[0, 0] == pytest.approx(0.0)
        assert sorted(t.prob[t.leaves()]) == pytest.approx([0.25, 0.75])

    def test_multidim_columns(self, tmp_path):
        path = tmp_path / "scen2.csv"
        path.write_text("1.0,0.0,0.0,1.0,2.0\n")
        t = load_csv(path, dim=2)
        assert t.d == 2 and t.T == 1

    def test_bad_width_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,0.0,1.0\n0.5,2.0\n")
        with pytest.raises(TreeFormatError):
            load_csv(path)

    def test_mass_must_sum_to_one(self, tmp_path):
        path = tmp_path / "bad_mass.csv"
        path.write_text("0.4,0.0,1.0\n0.4,0.0,2.0\n")
        with pytest.raises(TreeValidationError):
            load_csv(path)


class TestFrozenArrays:
    def test_arrays_are_read_only(self):
        t = generate_random(2, 2, seed=0)
        with pytest.raises(ValueError):
            t.prob[0] = 2.0

    def test_replacement_constructors(self):
        t = generate_random(2, 2, seed=0)
        t2 = t.with_quantizer(np.zeros((t.n_nodes, 1)))
        assert t2.quantizer.sum() == 0.0
        assert t.quantizer.sum() != 0.0
