import numpy as np
import pytest

from treeshrink.ibp import RegularizationOverflowError, ibp_solve
from treeshrink.ot_core import BarycenterProblem, barycenter_lp


def random_problem(rng, m=2, r=2, s=2):
    alpha = rng.uniform(0.1, 1.0, m)
    q = [rng.dirichlet(np.ones(s)) for _ in range(m)]
    D = [alpha[i] * rng.uniform(0, 1, (r, s)) for i in range(m)]
    return BarycenterProblem(q=q, D=D, alpha=alpha)


class TestTrivialInstances:
    def test_one_by_one(self):
        prob = BarycenterProblem(q=[np.array([1.0])], D=[np.array([[3.5]])],
                                 alpha=np.array([1.0]))
        res = ibp_solve(prob)
        assert res.plan_set.p == pytest.approx([1.0])
        assert res.plan_set.plans[0].ravel() == pytest.approx([1.0])
        assert res.objective == pytest.approx(3.5)

    def test_constant_costs_any_lambda(self):
        q = np.array([0.25, 0.75])
        prob = BarycenterProblem(q=[q], D=[np.full((3, 2), 1.7)],
                                 alpha=np.array([1.0]))
        for lam in (1.0, 10.0, 100.0):
            res = ibp_solve(prob, lam=lam)
            assert res.objective == pytest.approx(1.7, abs=1e-9)


class TestAgainstLP:
    def test_symmetric_2x2_within_two_percent(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            prob = random_problem(rng, m=2, r=2, s=2)
            obj_lp, _ = barycenter_lp(prob)
            res = ibp_solve(prob, lam=100.0, tol_fixed_point=1e-10)
            assert res.objective <= obj_lp * 1.02 + 1e-9
            assert res.objective >= obj_lp - 1e-9

    def test_accuracy_improves_with_lambda(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            prob = random_problem(rng, m=3, r=4, s=4)
            obj_lp, _ = barycenter_lp(prob)
            objs = [ibp_solve(prob, lam=lam, tol_fixed_point=1e-12).objective
                    for lam in (1.0, 10.0, 100.0)]
            assert objs[0] >= objs[1] - 1e-9 >= objs[2] - 2e-9
            assert objs[2] >= obj_lp - 1e-9


class TestInvariants:
    def test_column_marginals_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            prob = random_problem(rng, m=3, r=5, s=4)
            res = ibp_solve(prob, lam=50.0)
            for pl, qm in zip(res.plan_set.plans, prob.q):
                assert pl.sum(axis=0) == pytest.approx(qm, abs=1e-12)

    def test_barycenter_strictly_positive_and_normalized(self):
        rng = np.random.default_rng(3)
        prob = random_problem(rng, m=3, r=6, s=5)
        res = ibp_solve(prob, lam=30.0)
        assert np.all(res.plan_set.p > 0)
        assert res.plan_set.p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_weight_measure_constrained_but_skipped_in_mean(self):
        rng = np.random.default_rng(4)
        q = [rng.dirichlet(np.ones(3)) for _ in range(2)]
        D = [rng.uniform(0, 1, (3, 3)), np.zeros((3, 3))]
        prob = BarycenterProblem(q=q, D=D, alpha=np.array([1.0, 0.0]))
        res = ibp_solve(prob, lam=100.0)
        assert res.plan_set.plans[1].sum(axis=0) == pytest.approx(q[1], abs=1e-12)

    def test_zero_mass_marginal_entry(self):
        prob = BarycenterProblem(q=[np.array([0.0, 1.0])],
                                 D=[np.array([[1.0, 2.0], [3.0, 0.5]])],
                                 alpha=np.array([1.0]))
        res = ibp_solve(prob, lam=100.0)
        assert res.plan_set.plans[0][:, 0] == pytest.approx([0.0, 0.0])


class TestErrors:
    def test_overflow_signaled_for_huge_lambda(self):
        rng = np.random.default_rng(5)
        prob = random_problem(rng, m=2, r=3, s=3)
        with pytest.raises(RegularizationOverflowError) as info:
            ibp_solve(prob, lam=1e6)
        assert info.value.lam == 1e6
        assert info.value.max_exponent > 700

    def test_nonpositive_lambda_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            ibp_solve(random_problem(rng), lam=0.0)
