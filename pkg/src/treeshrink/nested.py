"""Exact process distance between two scenario trees.

The distance is evaluated by the standard backward recursion: the leaf-stage
table holds plain path costs, and each earlier stage solves, for every node
pair (m, n), an exact transport problem between the two conditional child
distributions with the next stage's table as costs.  The root entry of the
stage-0 table is the distance raised to ``order``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ot_core import wasserstein_lp
from .tree import ScenarioTree, path_cost_table


@dataclass
class CostTable:
    """Stage-indexed dense tables of node-pair costs delta(m, n).

    ``tables[t]`` has one row per stage-t node of the first tree and one
    column per stage-t node of the second; the leaf-stage table equals the
    path-cost table and ``tables[0][0, 0]`` is the order-th power of the
    process distance.
    """

    order: float
    tables: list

    @property
    def root_value(self) -> float:
        return float(self.tables[0][0, 0])


def _stage_transport(args):
    q_a, q_b, costs = args
    value, _ = wasserstein_lp(q_a, q_b, costs)
    return value


def nested_distance(tree_a: ScenarioTree, tree_b: ScenarioTree, order=2, workers=1):
    """Exact process distance of the given order between two trees.

    Returns ``(nd, CostTable)`` where ``nd = tables[0][0, 0] ** (1/order)``.
    The per-pair transport problems of one stage are independent; with
    ``workers > 1`` they are dispatched to a thread pool and reassembled in
    fixed pair order, so the result does not depend on the worker count.
    """
    if tree_a.T != tree_b.T or tree_a.d != tree_b.d:
        raise ValueError("trees must share stage count and quantizer dimension")
    big_t = tree_a.T
    tables = [None] * (big_t + 1)
    tables[big_t] = path_cost_table(tree_a, tree_b, order=order)

    for t in range(big_t - 1, -1, -1):
        nodes_a = tree_a.stage_nodes(t)
        nodes_b = tree_b.stage_nodes(t)
        child_a = tree_a.stage_nodes(t + 1)
        child_b = tree_b.stage_nodes(t + 1)
        next_table = tables[t + 1]
        jobs = []
        for m in nodes_a:
            rows = np.searchsorted(child_a, tree_a.children(m))
            q_a = tree_a.conditional_children_probs(m)
            for n in nodes_b:
                cols = np.searchsorted(child_b, tree_b.children(n))
                q_b = tree_b.conditional_children_probs(n)
                jobs.append((q_a, q_b, next_table[np.ix_(rows, cols)]))
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(_stage_transport, jobs))
        else:
            values = [_stage_transport(job) for job in jobs]
        tables[t] = np.asarray(values).reshape(nodes_a.shape[0], nodes_b.shape[0])

    table = CostTable(order, tables)
    return table.root_value ** (1.0 / order), table
