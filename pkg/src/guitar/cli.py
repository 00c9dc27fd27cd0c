"""Command-line entry point: ``guitar <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import sys
import time

from . import bench
from .dataset import DatasetError, generate_synthetic, load_dataset, load_groundtruth, save_dataset, save_groundtruth
from .graph import GraphError, GraphParams, build_graph, load_graph, save_graph
from .measure import DEFAULT_DEEPFM_HIDDEN, KINDS, MeasureError, load_measure, make_random_measure, save_measure
from .oracle import build_groundtruth
from .search import STRATEGIES, SearchParams, search

FORMATS = ("raw-f32", "csv")


def _fmt(name: str) -> str:
    return "text-csv" if name == "csv" else name


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="base vectors file")
    p.add_argument("--format", choices=FORMATS, default="raw-f32")


def _add_measure(p):
    p.add_argument("--measure", help="weight file written by make-measure")
    p.add_argument("--measure-kind", choices=KINDS, help="build a random measure instead of loading one")
    p.add_argument("--measure-seed", type=int, default=0)


def _measure(args, dim: int):
    if args.measure:
        return load_measure(args.measure)
    if not args.measure_kind:
        raise MeasureError("give --measure or --measure-kind")
    return make_random_measure(args.measure_kind, _kind_dims(args.measure_kind, dim, args), args.measure_seed)


def _kind_dims(kind: str, dim: int, args):
    if kind == "mlp-sigmoid":
        return [2 * dim, *DEFAULT_DEEPFM_HIDDEN, 1]
    if kind == "deepfm":
        fm = getattr(args, "fm_dim", None) or min(8, dim - 1)
        return (fm, dim - fm)
    return dim


def cmd_generate(args):
    ds = generate_synthetic(args.n, args.dim, args.seed, args.distribution)
    save_dataset(ds, args.out, _fmt(args.format))


def cmd_make_measure(args):
    if args.measure_kind is None:
        raise MeasureError("--measure-kind is required")
    save_measure(make_random_measure(args.measure_kind, _kind_dims(args.measure_kind, args.dim, args),
                                     args.measure_seed), args.out)


def cmd_build(args):
    ds = load_dataset(args.data, _fmt(args.format))
    g = build_graph(ds, GraphParams(args.M, args.kc, args.seed), selection=args.selection)
    save_graph(g, args.out)
    logging.info("built graph: n=%d max degree=%d unreachable=%d", g.n, g.max_degree(), g.unreachable_count)


def cmd_search(args):
    ds = load_dataset(args.data, _fmt(args.format))
    qs = load_dataset(args.queries, _fmt(args.format))
    g = load_graph(args.graph, ds)
    spec = _measure(args, ds.dim)
    params = SearchParams(args.k, args.k_search, args.strategy, args.alpha, args.fixed_count)
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["query_id", "rank", "vertex", "score", "nn_evals", "grad_evals", "hops", "elapsed_ns"])
        for qi, q in enumerate(qs.f64):
            t0 = time.perf_counter_ns()
            res, st = search(g, ds, spec, q, params)
            dt = time.perf_counter_ns() - t0
            for rank, (v, s) in enumerate(res.entries):
                w.writerow([qi, rank, v, repr(s), st.nn_evals, st.grad_evals, st.hops, dt])
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_groundtruth(args):
    ds = load_dataset(args.data, _fmt(args.format))
    qs = load_dataset(args.queries, _fmt(args.format))
    spec = _measure(args, ds.dim)
    save_groundtruth(build_groundtruth(ds, qs, spec, args.k), args.out)


def cmd_sweep(args):
    grid = bench.SweepGrid.from_json(args.grid)
    ds = load_dataset(args.data, _fmt(args.format))
    qpath = args.queries or grid.queries
    if qpath is None:
        raise DatasetError("give --queries or set 'queries' in the grid file")
    qs = load_dataset(qpath, _fmt(args.format))
    spec = _measure(args, ds.dim)
    if args.groundtruth:
        gt = load_groundtruth(args.groundtruth)
        if gt.k < grid.k:
            raise DatasetError(f"ground truth has k={gt.k}, grid needs {grid.k}")
        gt = type(gt)(gt.indices[:, : grid.k], gt.scores[:, : grid.k])
    else:
        gt = build_groundtruth(ds, qs, spec, grid.k)
    bench.run_sweep(grid, ds, spec, gt, qs, out_dir=args.out, threads=args.threads)


def _records(patterns):
    paths = []
    for p in patterns:
        paths.extend(sorted(glob.glob(p)) or [p])
    return bench.read_records(paths)


def cmd_curve(args):
    recs = _records(args.records)
    curves = bench.curves_by_label(recs, args.metric)
    bench.write_json(list(curves.values()), args.out)


def cmd_breakdown(args):
    levels = [float(x) for x in args.levels.split(",")]
    rows = bench.breakdown_table(_records(args.records), levels)
    if args.out:
        bench.write_json(rows, args.out)
        return
    w = csv.writer(sys.stdout)
    w.writerow(["label", "level", "nn", "grad", "total", "qps", "recall", "k_search"])
    for r in rows:
        if r.reachable:
            w.writerow([r.label, r.level, f"{r.nn:.2f}", f"{r.grad:.2f}", f"{r.total:.2f}",
                        f"{r.qps:.1f}", f"{r.recall:.4f}", r.k_search])
        else:
            w.writerow([r.label, r.level, "unreachable", "", "", "", "", ""])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="guitar", description="Gradient-pruned graph search for neural ranking measures.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distribution", choices=("gaussian", "uniform"), default="gaussian")
    p.add_argument("--format", choices=FORMATS, default="raw-f32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("make-measure", help="write a randomly initialised measure")
    p.add_argument("--measure-kind", choices=KINDS, required=True)
    p.add_argument("--measure-seed", type=int, default=0)
    p.add_argument("--dim", type=int, required=True, help="vector dimension")
    p.add_argument("--fm-dim", type=int, default=None, help="deepfm: width of the factorisation block")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_measure)

    p = sub.add_parser("build", help="build a proximity graph")
    _add_data(p)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--kc", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--selection", choices=("diverse", "closest"), default="diverse")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="search a graph for each query")
    p.add_argument("--graph", required=True)
    _add_data(p)
    p.add_argument("--queries", required=True)
    _add_measure(p)
    p.add_argument("--strategy", choices=STRATEGIES, default="baseline")
    p.add_argument("--alpha", type=float, default=1.01)
    p.add_argument("--fixed-count", type=int, default=1)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--k-search", type=int, default=64)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("groundtruth", help="exact top-k by brute force")
    _add_data(p)
    p.add_argument("--queries", required=True)
    _add_measure(p)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_groundtruth)

    p = sub.add_parser("sweep", help="run a parameter grid and write per-strategy record CSVs")
    p.add_argument("--grid", required=True)
    _add_data(p)
    p.add_argument("--queries")
    _add_measure(p)
    p.add_argument("--groundtruth")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="records")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("curve", help="bucketed Pareto curves from sweep records")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--metric", choices=("qps", "total_cost"), default="qps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("breakdown", help="cheapest cost per strategy at each recall level")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--levels", default="0.85,0.90,0.95")
    p.add_argument("--out", help="write the table as JSON instead of CSV on stdout")
    p.set_defaults(func=cmd_breakdown)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (DatasetError, GraphError, MeasureError, ValueError, OSError) as e:
        print(f"guitar: error: {e}", file=sys.stderr)
        return 1
    return 0
