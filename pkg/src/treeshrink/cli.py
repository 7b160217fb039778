"""Command-line front end: generate, ingest, reduce, evaluate, benchmark.

Exit codes: 0 success, 2 bad input or usage, 3 reduction stopped on the
iteration cap instead of the tolerance.  Every command that writes files also
writes a run manifest (``<output>.manifest.json``) next to its first output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .init_filtration import ScenarioMatrix, ffs_init, kmeans_init, random_init
from .nested import nested_distance
from .reduce import ReductionConfig, reduce_tree
from .tree import (ScenarioTree, TreeFormatError, TreeValidationError,
                   generate_random, load_csv)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3


def _parse_range(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    if not lo < hi:
        raise argparse.ArgumentTypeError("range must satisfy lo < hi")
    return lo, hi


def _parse_int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _write_manifest(path, command, args, inputs, outputs, seed, seconds):
    doc = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "versions": {
            "treeshrink": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "seconds": seconds,
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, default=str)
        fh.write("\n")


def _load_tree(path):
    try:
        return ScenarioTree.load(path)
    except FileNotFoundError as exc:
        raise TreeFormatError(f"no such file: {path}") from exc


def _emit_tree(tree, out_path, command, args, inputs, seed, seconds):
    if out_path is None:
        json.dump(tree.to_json_dict(), sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        tree.save(out_path)
        _write_manifest(out_path, command, args, inputs, [str(out_path)], seed, seconds)


def cmd_gen(args):
    tick = time.perf_counter()
    tree = generate_random(args.stages - 1, args.branching, dim=args.dim,
                           value_range=args.range, seed=args.seed)
    _emit_tree(tree, args.output, "gen", args, [], args.seed,
               time.perf_counter() - tick)
    return EXIT_OK


def cmd_ingest(args):
    tick = time.perf_counter()
    try:
        tree = load_csv(args.input, dim=args.dim)
    except (TreeFormatError, TreeValidationError, FileNotFoundError) as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.merge_prefixes:
        from .init_filtration import merge_prefixes
        tree = merge_prefixes(tree)
    _emit_tree(tree, args.output, "ingest", args, [str(args.input)], None,
               time.perf_counter() - tick)
    return EXIT_OK


def _initial_reduced(args, original):
    big_t = original.T
    if args.init == "random":
        lo = float(original.quantizer.min())
        hi = float(original.quantizer.max())
        if args.init_range is not None:
            lo, hi = args.init_range
        return random_init([args.target_branching] * big_t, dim=original.d,
                           value_range=(lo, hi), seed=args.seed)
    scenarios = ScenarioMatrix.from_tree(original)
    k = args.target_scenarios or args.target_branching ** big_t
    k = min(k, scenarios.S)
    if args.init == "kmeans":
        return kmeans_init(scenarios, k, seed=args.seed)
    return ffs_init(scenarios, k)


def cmd_reduce(args):
    tick = time.perf_counter()
    original = _load_tree(args.input)
    reduced0 = _initial_reduced(args, original)
    config = ReductionConfig(
        solver=args.solver, tol=args.tol, max_outer=args.max_iter,
        rho=args.rho, lam=getattr(args, "lambda"), workers=args.workers,
        n_big=args.n_big, branch_big=args.branch_big, seed=args.seed)
    final, report = reduce_tree(original, reduced0, config)
    seconds = time.perf_counter() - tick

    outputs = []
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "delta00", "nd", "seconds"])
            writer.writerows(report.trace_rows())
        outputs.append(str(args.trace))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=1)
            fh.write("\n")
        outputs.append(str(args.report))
    if args.output is None:
        json.dump(final.to_json_dict(), sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        final.save(args.output)
        outputs.insert(0, str(args.output))
    if outputs:
        _write_manifest(outputs[0], "reduce", args, [str(args.input)], outputs,
                        args.seed, seconds)
    print(f"final nd: {report.final_nd:.9g}  iterations: {report.iterations}  "
          f"converged: {report.converged}", file=sys.stderr)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_nd(args):
    a = _load_tree(args.tree_a)
    b = _load_tree(args.tree_b)
    try:
        nd, _ = nested_distance(a, b, order=args.order)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{nd:.9g}")
    return EXIT_OK


def _bench_tree(n_subtrees, children, dim, seed):
    """Benchmark instance: root -> 2 nodes -> n nodes -> n*children leaves."""
    rng_seed = seed
    half = n_subtrees // 2
    branching_stage2 = [n_subtrees - half, half] if half else [n_subtrees]
    # Build per-node children counts stage by stage.
    parent, stage, prob = [-1], [0], [1.0]
    rng = np.random.default_rng(rng_seed)

    def expand(node_ids, counts, t):
        new_ids = []
        for node, c in zip(node_ids, counts):
            raw = rng.uniform(size=c)
            cond = raw / raw.sum()
            for j in range(c):
                parent.append(node)
                stage.append(t)
                prob.append(prob[node] * cond[j])
                new_ids.append(len(parent) - 1)
        return new_ids

    lvl1 = expand([0], [2], 1) if n_subtrees > 1 else expand([0], [1], 1)
    lvl2 = expand(lvl1, branching_stage2[:len(lvl1)], 2)
    expand(lvl2, [children] * len(lvl2), 3)
    quantizer = rng.uniform(-10.0, 10.0, size=(len(parent), dim))
    return ScenarioTree(np.array(parent), np.array(stage), quantizer, np.array(prob))


def cmd_bench(args):
    rows = []
    for n in args.subtrees:
        for c in args.children:
            original = _bench_tree(n, c, args.dim, args.seed)
            for solver in args.solvers:
                reduced0 = random_init([2, 2, 2], dim=args.dim,
                                       value_range=(-10.0, 10.0), seed=args.seed)
                config = ReductionConfig(solver=solver, tol=1e-12,
                                         max_outer=args.iters,
                                         rho=args.rho, lam=getattr(args, "lambda"),
                                         workers=args.workers)
                _, report = reduce_tree(original, reduced0, config)
                stage_t = 2  # the n-subtree stage carries the heavy barycenters
                secs = float(np.mean([s[stage_t] for s in report.stage_seconds]))
                rows.append([solver, n, c, secs, report.final_nd])
    out = sys.stdout if args.output is None else open(args.output, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(["solver", "n", "branch", "seconds", "nd"])
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
            _write_manifest(args.output, "bench", args, [], [str(args.output)],
                            args.seed, 0.0)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treeshrink",
        description="Scenario-tree reduction via nested-distance minimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random uniform-branching tree")
    p.add_argument("--stages", type=int, required=True,
                   help="number of stage levels including the root")
    p.add_argument("--branching", type=int, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--range", type=_parse_range, default=(-10.0, 10.0),
                   metavar="LO,HI")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="load a scenario CSV as a fan tree")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--merge-prefixes", action="store_true",
                   help="fold branches sharing identical prefixes")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("reduce", help="reduce a tree toward a smaller structure")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--target-branching", type=int, default=2)
    p.add_argument("--target-scenarios", type=int, default=None,
                   help="branch count for kmeans/ffs fan initializations")
    p.add_argument("--solver", choices=["lp", "mam", "ibp", "auto"], default="auto")
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--lambda", type=float, default=100.0)
    p.add_argument("--init", choices=["random", "kmeans", "ffs"], default="random")
    p.add_argument("--init-range", type=_parse_range, default=None, metavar="LO,HI")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--n-big", type=int, default=10)
    p.add_argument("--branch-big", type=int, default=150)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("TREESHRINK_WORKERS", "1")))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--trace", default=None, help="per-iteration CSV trace")
    p.add_argument("--report", default=None, help="full JSON report")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("nd", help="exact process distance between two trees")
    p.add_argument("-a", "--tree-a", required=True)
    p.add_argument("-b", "--tree-b", required=True)
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_nd)

    p = sub.add_parser("bench", help="per-stage solver timing sweep")
    p.add_argument("--subtrees", type=_parse_int_list, default=[2, 8],
                   metavar="N1,N2,...")
    p.add_argument("--children", type=_parse_int_list, default=[10, 200],
                   metavar="C1,C2,...")
    p.add_argument("--solvers", type=lambda s: s.split(","), default=["lp", "mam"])
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--lambda", type=float, default=100.0)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("TREESHRINK_WORKERS", "1")))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TreeFormatError, TreeValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
