"""Barycenter solver based on averaging the plans' barycenter-side marginals.

A Douglas-Rachford splitting applied to the coupled barycenter LP: each
iteration averages the per-measure row marginals into a consensus vector and
then, measure by measure and column by column, projects a shifted plan column
exactly onto the scaled simplex carrying that column's marginal mass.  The
governing iterates are shadow-sequence plans and may go negative between
iterations; the reported plans are the latest projection outputs, so they are
nonnegative with exact column sums by construction.

The per-measure updates touch disjoint state once the consensus vector is
fixed, so they can run in any order (or in parallel) without changing the
result; the consensus reduction itself is evaluated in fixed measure order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ot_core import BarycenterProblem, TransportPlanSet, project_columns_scaled_simplex

DEFAULT_MAX_ITER = 5000
DEFAULT_MARGINAL_TOL = 1e-6


@dataclass
class MamResult:
    objective: float
    plan_set: TransportPlanSet
    iterations: int
    converged: bool
    marginal_gaps: list = field(default_factory=list, repr=False)


def default_rho(problem: BarycenterProblem) -> float:
    """Proximal parameter default: mean of all cost entries over 50.

    The parameter only affects convergence speed, so a cheap scale heuristic
    is enough; zero-cost problems fall back to 1.
    """
    total = sum(float(dm.sum()) for dm in problem.D)
    count = sum(dm.size for dm in problem.D)
    mean = total / max(count, 1)
    return mean / 50.0 if mean > 0 else 1.0


def mam_solve(problem: BarycenterProblem, rho=None, max_iter=DEFAULT_MAX_ITER,
              tol_marginal=DEFAULT_MARGINAL_TOL, init_plans=None) -> MamResult:
    """Solve a barycenter problem by averaged-marginal splitting.

    Parameters
    ----------
    problem : BarycenterProblem
        Weights are carried inside the cost matrices; zero-weight measures
        (all-zero cost) stay in the consensus and still constrain feasibility.
    rho : float, optional
        Proximal parameter > 0; defaults to :func:`default_rho`.
    max_iter, tol_marginal :
        Stop when the largest infinity-norm gap between the consensus vector
        and any measure's row marginal drops to ``tol_marginal``, or after
        ``max_iter`` iterations (the result is then flagged unconverged).
    init_plans : list of arrays, optional
        Warm-start plans, one (R, S^m) array per measure; defaults to the
        product of the uniform barycenter with each marginal.
    """
    problem.validate()
    if rho is None:
        rho = default_rho(problem)
    if rho <= 0:
        raise ValueError("rho must be positive")
    r = problem.R
    sizes = problem.support_sizes()
    m_count = problem.M

    inv_sizes = 1.0 / np.asarray(sizes, dtype=np.float64)
    a = inv_sizes / inv_sizes.sum()

    if init_plans is None:
        shadow = [np.full((r, s), 1.0 / r) * qm[None, :]
                  for s, qm in zip(sizes, problem.q)]
    else:
        if len(init_plans) != m_count:
            raise ValueError("need one warm-start plan per measure")
        shadow = [np.array(pl, dtype=np.float64) for pl in init_plans]
    shadow_marg = np.stack([pl.sum(axis=1) for pl in shadow])

    # The governing (shadow) iterates may go negative and their marginal
    # disagreement converges to a dual offset, not zero; feasibility and the
    # stopping test live on the projection outputs, whose column sums equal
    # the marginals exactly and whose row marginals reach consensus.
    plans = [np.array(pl) for pl in shadow]
    gaps = []
    converged = False
    iterations = 0
    p = a @ shadow_marg
    for iterations in range(1, max_iter + 1):
        feas_marg = np.empty_like(shadow_marg)
        for m in range(m_count):
            shift = (p - shadow_marg[m]) / sizes[m]
            y = shadow[m] + 2.0 * shift[:, None] - problem.D[m] / rho
            plans[m] = project_columns_scaled_simplex(y, problem.q[m])
            feas_marg[m] = plans[m].sum(axis=1)
            shadow[m] = plans[m] - shift[:, None]
            shadow_marg[m] = shadow[m].sum(axis=1)
        p = a @ shadow_marg
        p_feas = a @ feas_marg
        gap = float(np.max(np.abs(feas_marg - p_feas[None, :])))
        gaps.append(gap)
        if gap <= tol_marginal:
            converged = True
            break

    p_final = a @ np.stack([pl.sum(axis=1) for pl in plans])
    p_final = p_final / p_final.sum()
    objective = float(sum(np.sum(dm * pl) for dm, pl in zip(problem.D, plans)))
    return MamResult(objective, TransportPlanSet(plans, p_final),
                     iterations, converged, gaps)
