"""Scenario-tree data model: storage, validation, path algebra, generation, I/O.

A tree is stored as flat per-node arrays (parent index, stage, quantizer
vector, unconditional probability) plus a CSR children index derived at
construction time.  Instances are frozen after construction: the arrays are
marked read-only and any change goes through whole-tree replacement
(``with_quantizer`` / ``with_prob``), which makes sharing across worker
threads safe.
"""

from __future__ import annotations

import csv
import json

import numpy as np

# Mass-balance tolerances used by validate().
PARENT_SUM_TOL = 1e-9
LEAF_SUM_TOL = 1e-12


class TreeFormatError(ValueError):
    """Raised when a tree file does not conform to the on-disk schema."""


class TreeValidationError(ValueError):
    """Raised when a structurally parsed tree violates tree invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario tree:\n" + "\n".join(self.violations))


class ZeroProbabilityError(ZeroDivisionError):
    """Conditioning on an ancestor that carries zero probability mass."""


class ScenarioTree:
    """Rooted multistage tree with vector-valued nodes and node probabilities.

    Parameters
    ----------
    parent : array of int, shape (N,)
        Direct predecessor of each node, -1 for the root.
    stage : array of int, shape (N,)
        Time stage of each node; the root sits at stage 0 and every child is
        one stage below its parent.
    quantizer : array of float, shape (N, d) or (N,)
        Outcome value attached to each node.
    prob : array of float, shape (N,)
        Unconditional probability of each node.
    """

    def __init__(self, parent, stage, quantizer, prob):
        parent = np.asarray(parent, dtype=np.int64).copy()
        stage = np.asarray(stage, dtype=np.int64).copy()
        quantizer = np.asarray(quantizer, dtype=np.float64).copy()
        prob = np.asarray(prob, dtype=np.float64).copy()
        if quantizer.ndim == 1:
            quantizer = quantizer[:, None]
        n = parent.shape[0]
        if not (stage.shape == (n,) and prob.shape == (n,) and quantizer.shape[0] == n):
            raise ValueError("parent, stage, quantizer and prob must agree on node count")
        if n == 0:
            raise ValueError("a scenario tree needs at least one node")
        if np.any((parent >= n) | (parent < -1)):
            raise ValueError("parent indices out of range")

        self.parent = parent
        self.stage = stage
        self.quantizer = quantizer
        self.prob = prob

        roots = np.flatnonzero(parent < 0)
        self.root = int(roots[0]) if roots.size else -1

        # CSR children index; children of one node keep ascending-id order.
        nonroot = np.flatnonzero(parent >= 0)
        counts = np.bincount(parent[nonroot], minlength=n)
        self._child_ptr = np.concatenate(([0], np.cumsum(counts)))
        order = nonroot[np.argsort(parent[nonroot], kind="stable")]
        self._child_idx = order

        t_max = int(stage.max())
        self._stage_nodes = [np.flatnonzero(stage == t) for t in range(t_max + 1)]

        for arr in (self.parent, self.stage, self.quantizer, self.prob,
                    self._child_ptr, self._child_idx):
            arr.flags.writeable = False

    # -- basic accessors ---------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @property
    def T(self) -> int:
        """Index of the last stage (root is stage 0)."""
        return len(self._stage_nodes) - 1

    @property
    def d(self) -> int:
        return self.quantizer.shape[1]

    def children(self, node: int) -> np.ndarray:
        return self._child_idx[self._child_ptr[node]:self._child_ptr[node + 1]]

    def n_children(self, node: int) -> int:
        return int(self._child_ptr[node + 1] - self._child_ptr[node])

    def stage_nodes(self, t: int) -> np.ndarray:
        return self._stage_nodes[t]

    def leaves(self) -> np.ndarray:
        return self._stage_nodes[self.T]

    def is_leaf(self, node: int) -> bool:
        return self.n_children(node) == 0

    # -- probability algebra ----------------------------------------------

    def conditional_prob(self, node: int, ancestor: int) -> float:
        """P(node | ancestor) = prob(node)/prob(ancestor).

        ``ancestor`` must lie on the root path of ``node`` (the node itself is
        also accepted).  Conditioning on zero mass raises
        :class:`ZeroProbabilityError`.
        """
        cur = node
        while cur != ancestor and cur >= 0:
            cur = int(self.parent[cur])
        if cur != ancestor:
            raise ValueError(f"node {ancestor} is not an ancestor of node {node}")
        if self.prob[ancestor] <= 0.0:
            raise ZeroProbabilityError(
                f"conditioning on node {ancestor} with zero probability")
        return float(self.prob[node] / self.prob[ancestor])

    def conditional_children_probs(self, node: int) -> np.ndarray:
        """Vector (P(i|node))_{i in children(node)}.

        Falls back to the uniform distribution when the node carries no mass,
        so downstream transport problems stay well posed; the corresponding
        entries never matter because they are weighted by that same mass.
        """
        ch = self.children(node)
        mass = self.prob[node]
        if mass <= 0.0:
            return np.full(ch.shape[0], 1.0 / ch.shape[0])
        q = self.prob[ch] / mass
        return q

    # -- path algebra --------------------------------------------------------

    def path_nodes(self, leaf: int) -> np.ndarray:
        """Node indices on the root-to-leaf path, root first (length T+1)."""
        out = np.empty(self.stage[leaf] + 1, dtype=np.int64)
        cur = leaf
        for t in range(self.stage[leaf], -1, -1):
            out[t] = cur
            cur = int(self.parent[cur])
        return out

    def path_matrix(self) -> np.ndarray:
        """(n_leaves, T+1) node indices of every root-to-leaf path."""
        lv = self.leaves()
        out = np.empty((lv.shape[0], self.T + 1), dtype=np.int64)
        cur = lv
        for t in range(self.T, -1, -1):
            out[:, t] = cur
            cur = self.parent[cur]
        return out

    def path_values(self) -> np.ndarray:
        """(n_leaves, T+1, d) quantizers along every root-to-leaf path."""
        return self.quantizer[self.path_matrix()]

    # -- validation ----------------------------------------------------------

    def validate(self) -> list:
        """Check all tree invariants; return a list of violation messages.

        An empty list means the tree is valid.  Each message names the node
        and the violated rule, so the result doubles as a diagnostic report.
        """
        v = []
        roots = np.flatnonzero(self.parent < 0)
        if roots.size != 1:
            v.append(f"tree: expected exactly one root, found {roots.size}")
        for r in roots:
            if self.stage[r] != 0:
                v.append(f"node {r}: root must sit at stage 0, found stage {self.stage[r]}")
        nonroot = np.flatnonzero(self.parent >= 0)
        bad = nonroot[self.stage[nonroot] != self.stage[self.parent[nonroot]] + 1]
        for nd in bad:
            v.append(f"node {nd}: stage {self.stage[nd]} is not parent stage "
                     f"{self.stage[self.parent[nd]]} + 1")
        neg = np.flatnonzero(self.prob < 0.0)
        for nd in neg:
            v.append(f"node {nd}: negative probability {self.prob[nd]}")
        t_last = self.T
        for nd in range(self.n_nodes):
            nch = self.n_children(nd)
            if nch == 0:
                if self.stage[nd] != t_last:
                    v.append(f"node {nd}: leaf at stage {self.stage[nd]}, "
                             f"expected all leaves at stage {t_last}")
            else:
                s = float(np.sum(self.prob[self.children(nd)]))
                if abs(s - self.prob[nd]) > PARENT_SUM_TOL:
                    v.append(f"node {nd}: probability {self.prob[nd]} != children sum {s}")
        leaf_ids = np.flatnonzero([self.n_children(nd) == 0 for nd in range(self.n_nodes)])
        total = float(np.sum(self.prob[leaf_ids]))
        if abs(total - 1.0) > LEAF_SUM_TOL:
            v.append(f"tree: leaf probabilities sum to {total}, expected 1")
        return v

    # -- replacement constructors ---------------------------------------------

    def with_quantizer(self, quantizer) -> "ScenarioTree":
        return ScenarioTree(self.parent, self.stage, quantizer, self.prob)

    def with_prob(self, prob) -> "ScenarioTree":
        return ScenarioTree(self.parent, self.stage, self.quantizer, prob)

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            nodes.append({
                "id": i,
                "parent": None if self.parent[i] < 0 else int(self.parent[i]),
                "quantizer": [float(x) for x in self.quantizer[i]],
                "prob": float(self.prob[i]),
            })
        return {"T": self.T, "d": self.d, "nodes": nodes}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc) -> "ScenarioTree":
        try:
            nodes = doc["nodes"]
            d = int(doc["d"])
            n = len(nodes)
            parent = np.empty(n, dtype=np.int64)
            quantizer = np.empty((n, d), dtype=np.float64)
            prob = np.empty(n, dtype=np.float64)
            seen = np.zeros(n, dtype=bool)
            for rec in nodes:
                i = int(rec["id"])
                if not (0 <= i < n) or seen[i]:
                    raise TreeFormatError(f"node {rec['id']}: ids must be dense 0..{n - 1}")
                seen[i] = True
                par = rec["parent"]
                parent[i] = -1 if par is None else int(par)
                qz = np.asarray(rec["quantizer"], dtype=np.float64)
                if qz.shape != (d,):
                    raise TreeFormatError(f"node {i}: quantizer length {qz.shape} != d={d}")
                quantizer[i] = qz
                prob[i] = float(rec["prob"])
        except TreeFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeFormatError(f"malformed tree document: {exc}") from exc
        if not seen.all():
            raise TreeFormatError("node ids are not dense")
        if np.any(parent >= n) or np.any(parent < -1):
            raise TreeFormatError("parent index out of range")

        # Stages are implicit: depth below the root.
        stage = np.full(n, -1, dtype=np.int64)
        stage[parent < 0] = 0
        for _ in range(n):
            todo = (stage < 0) & (parent >= 0)
            if not todo.any():
                break
            idx = np.flatnonzero(todo)
            ready = idx[stage[parent[idx]] >= 0]
            if ready.size == 0:
                raise TreeFormatError("parent links contain a cycle")
            stage[ready] = stage[parent[ready]] + 1
        tree = cls(parent, stage, quantizer, prob)
        violations = tree.validate()
        if violations:
            raise TreeValidationError(violations)
        return tree

    @classmethod
    def load(cls, path) -> "ScenarioTree":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise TreeFormatError(f"not valid JSON: {exc}") from exc
        return cls.from_json_dict(doc)


def generate_random(T, branching, dim=1, value_range=(-10.0, 10.0), seed=0):
    """Full ``branching``-ary tree with T+1 levels and uniform conditionals.

    Quantizers are i.i.d. uniform over ``value_range`` in every dimension,
    including the root; conditional child probabilities are all
    ``1/branching``.  Bit-identical output for equal seeds.
    """
    if T < 1 or branching < 1:
        raise ValueError("need T >= 1 and branching >= 1")
    rng = np.random.default_rng(seed)
    counts = [branching ** t for t in range(T + 1)]
    offsets = np.concatenate(([0], np.cumsum(counts)))
    n = int(offsets[-1])
    parent = np.full(n, -1, dtype=np.int64)
    stage = np.empty(n, dtype=np.int64)
    prob = np.empty(n, dtype=np.float64)
    stage[0] = 0
    prob[0] = 1.0
    for t in range(1, T + 1):
        lo, hi = offsets[t], offsets[t + 1]
        ids = np.arange(lo, hi)
        parent[ids] = offsets[t - 1] + (ids - lo) // branching
        stage[ids] = t
        prob[ids] = prob[parent[ids]] / branching
    lo, hi = value_range
    quantizer = rng.uniform(lo, hi, size=(n, dim))
    return ScenarioTree(parent, stage, quantizer, prob)


def fan_tree(paths, prob):
    """Tree with one branch per scenario path.

    ``paths`` has shape (S, T+1, d); the root takes the probability-weighted
    mean of the stage-0 values (scenarios of one process normally share that
    value, in which case the mean is exact), and scenario s becomes the chain
    of stages 1..T carrying probability ``prob[s]``.
    """
    paths = np.asarray(paths, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    if paths.ndim == 2:
        paths = paths[:, :, None]
    s_count, t_levels, dim = paths.shape
    if t_levels < 2:
        raise ValueError("scenario paths need at least two stages")
    big_t = t_levels - 1
    n = 1 + s_count * big_t
    parent = np.empty(n, dtype=np.int64)
    stage = np.empty(n, dtype=np.int64)
    quantizer = np.empty((n, dim), dtype=np.float64)
    p = np.empty(n, dtype=np.float64)
    parent[0] = -1
    stage[0] = 0
    total = float(prob.sum())
    quantizer[0] = (prob / total) @ paths[:, 0, :]
    p[0] = total
    for t in range(1, big_t + 1):
        ids = 1 + (t - 1) * s_count + np.arange(s_count)
        parent[ids] = 0 if t == 1 else ids - s_count
        stage[ids] = t
        quantizer[ids] = paths[:, t, :]
        p[ids] = prob
    return ScenarioTree(parent, stage, quantizer, p)


def read_scenarios_csv(path, dim=1):
    """Parse the scenario CSV format into ``(paths, prob)`` arrays.

    One row per scenario: ``prob, x_{0,1..d}, ..., x_{T,1..d}``.  An optional
    non-numeric header row is skipped.  The stage count is inferred from the
    column count and ``dim``.
    """
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            rec = [c.strip() for c in rec if c.strip() != ""]
            if not rec:
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                if rows:
                    raise TreeFormatError(f"non-numeric row in {path}: {rec}")
                continue  # header
    if not rows:
        raise TreeFormatError(f"no scenario rows in {path}")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise TreeFormatError("scenario rows have inconsistent column counts")
    if (width - 1) % dim != 0 or width - 1 < 2 * dim:
        raise TreeFormatError(
            f"{width} columns cannot hold prob + (T+1) stages of dimension {dim}")
    data = np.asarray(rows, dtype=np.float64)
    prob = data[:, 0]
    paths = data[:, 1:].reshape(data.shape[0], (width - 1) // dim, dim)
    return paths, prob


def load_csv(path, dim=1):
    """Load a scenario CSV as a fan tree and validate it."""
    paths, prob = read_scenarios_csv(path, dim=dim)
    tree = fan_tree(paths, prob)
    violations = tree.validate()
    if violations:
        raise TreeValidationError(violations)
    return tree


def path_cost(tree_a, leaf_a, tree_b, leaf_b, order=2):
    """Ground cost between two root-to-leaf paths.

    For ``order`` 2 the cost decomposes across stages as the sum of squared
    Euclidean stage distances (the squared norm of the concatenated path
    vectors), which is the form under which the mean update of the reduction
    loop is exactly optimal.  Other orders sum the per-stage Euclidean
    distances first and raise the total to ``order``.
    """
    if tree_a.T != tree_b.T or tree_a.d != tree_b.d:
        raise ValueError("trees must share stage count and quantizer dimension")
    if not (tree_a.is_leaf(leaf_a) and tree_b.is_leaf(leaf_b)):
        raise ValueError("path costs are defined between leaves")
    xa = tree_a.quantizer[tree_a.path_nodes(leaf_a)]
    xb = tree_b.quantizer[tree_b.path_nodes(leaf_b)]
    diff = xa - xb
    if order == 2:
        return float(np.sum(diff * diff))
    stage_norms = np.sqrt(np.sum(diff * diff, axis=1))
    return float(np.sum(stage_norms) ** order)


def path_cost_table(tree_a, tree_b, order=2):
    """Dense (leaves_a x leaves_b) table of path costs, leaves in id order."""
    if tree_a.T != tree_b.T or tree_a.d != tree_b.d:
        raise ValueError("trees must share stage count and quantizer dimension")
    pa = tree_a.path_values()
    pb = tree_b.path_values()
    la, lb = pa.shape[0], pb.shape[0]
    acc = np.zeros((la, lb))
    for t in range(tree_a.T + 1):
        sq = np.zeros((la, lb))
        for k in range(tree_a.d):
            diff = pa[:, t, k][:, None] - pb[None, :, t, k]
            sq += diff * diff
        acc += sq if order == 2 else np.sqrt(sq)
    return acc if order == 2 else acc ** order
