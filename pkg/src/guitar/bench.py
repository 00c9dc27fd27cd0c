"""Parameter sweeps, recall, QPS timing, bucketed Pareto curves and cost breakdowns.

QPS counts only time spent inside the search call.  Counter columns are the
hardware-independent comparison; timings are not reproducible across machines.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import GroundTruth, VectorDataset, load_dataset
from .graph import GraphParams, ProximityGraph, build_graph
from .measure import MeasureSpec
from .search import STRATEGIES, SearchParams, TopKResult, search

log = logging.getLogger(__name__)

N_BUCKETS = 100
TIE_TOL = 1e-9


def recall(result, truth_row, k: int) -> float:
    """|A & B| / k for returned indices A and true top-k indices B."""
    a = result.indices if isinstance(result, TopKResult) else result
    b = truth_row[0] if isinstance(truth_row, tuple) else truth_row
    a = np.asarray(a).tolist()
    b = np.asarray(b).tolist()
    if len(b) != k:
        raise ValueError(f"truth row has {len(b)} entries, expected k={k}")
    if len(a) > k:
        raise ValueError(f"result has {len(a)} entries, more than k={k}")
    return len(set(a) & set(b)) / k


def tie_credits(result: TopKResult, truth_indices, truth_scores, tol: float = TIE_TOL) -> int:
    """Returned indices outside the truth set whose score is within ``tol`` of the k-th true score."""
    kth = float(truth_scores[-1])
    truth = set(np.asarray(truth_indices).tolist())
    return sum(1 for i, s in result.entries if i not in truth and abs(s - kth) <= tol)


@dataclass
class SweepGrid:
    M: list[int] = field(default_factory=lambda: [16])
    k_construction: list[int] = field(default_factory=lambda: [100])
    k_search: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    alpha: list[float] = field(default_factory=lambda: [1.01])
    strategy: list[str] = field(default_factory=lambda: ["baseline", "guitar-angle"])
    k: int = 10
    queries: str | None = None
    # alphas for guitar-projection; defaults to ``alpha``
    projection_alpha: list[float] | None = None
    fixed_count: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    selection: str = "diverse"

    def __post_init__(self):
        for name in ("M", "k_construction", "k_search", "alpha", "strategy"):
            if not getattr(self, name):
                raise ValueError(f"sweep grid field {name!r} is empty")
        for s in self.strategy:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for m, kc in zip(self.M, self.k_construction):
            GraphParams(m, kc)
        for a in self.alpha + (self.projection_alpha or []):
            if not a >= 1.0:
                raise ValueError(f"alpha must be >= 1, got {a}")
        if any(ks < 1 for ks in self.k_search) or self.k < 1:
            raise ValueError("k and k_search values must be positive")

    @classmethod
    def from_json(cls, path) -> "SweepGrid":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown sweep grid fields: {sorted(unknown)}")
        return cls(**raw)

    def search_params(self) -> list[SearchParams]:
        out = []
        for strat in self.strategy:
            if strat == "baseline":
                variants = [{}]
            elif strat == "guitar-fixed-count":
                variants = [{"fixed_count": c} for c in self.fixed_count]
            elif strat == "guitar-projection" and self.projection_alpha:
                variants = [{"alpha": a} for a in self.projection_alpha]
            else:
                variants = [{"alpha": a} for a in self.alpha]
            for extra in variants:
                for ks in self.k_search:
                    if ks >= self.k:
                        out.append(SearchParams(k=self.k, k_search=ks, strategy=strat, **extra))
        return out


@dataclass
class RunRecord:
    strategy: str
    alpha: float
    fixed_count: int
    M: int
    k_construction: int
    k_search: int
    k: int
    n_queries: int
    recall: float
    qps: float
    nn_evals: float
    grad_evals: float
    total_cost: float
    hops: float
    tie_credits: int
    wall_time_s: float
    dataset_fingerprint: str

    @property
    def label(self) -> str:
        if self.strategy == "baseline":
            return "baseline"
        if self.strategy == "guitar-fixed-count":
            return f"guitar-fixed-{self.fixed_count}"
        return f"{self.strategy}-{self.alpha:g}"

    def counters(self) -> tuple:
        return (self.recall, self.nn_evals, self.grad_evals, self.total_cost, self.hops, self.tie_credits)


RECORD_FIELDS = [f.name for f in fields(RunRecord)]


def run_queries(graph: ProximityGraph, data: VectorDataset, measure: MeasureSpec, queries: VectorDataset,
                truth: GroundTruth, params: SearchParams, threads: int = 1) -> RunRecord:
    """Run every query once with ``params`` and aggregate recall, counters and timing."""
    qs = queries.f64

    def one(i):
        t0 = time.perf_counter_ns()
        res, st = search(graph, data, measure, qs[i], params)
        return res, st, time.perf_counter_ns() - t0

    if threads > 1:
        t0 = time.perf_counter_ns()
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(one, range(len(qs))))
        elapsed_ns = time.perf_counter_ns() - t0
    else:
        outs = [one(i) for i in range(len(qs))]
        elapsed_ns = sum(o[2] for o in outs)

    nq = len(qs)
    hits = 0.0
    ties = nn = grad = hops = 0
    for i, (res, st, _) in enumerate(outs):
        ti, ts = truth.row(i)
        hits += recall(res, ti, truth.k) * truth.k
        c = tie_credits(res, ti, ts)
        hits += c
        ties += c
        nn += st.nn_evals
        grad += st.grad_evals
        hops += st.hops
    wall = max(elapsed_ns, 1) / 1e9
    nn_mean, grad_mean = nn / nq, grad / nq
    return RunRecord(
        strategy=params.strategy,
        alpha=params.alpha if params.strategy in ("guitar-angle", "guitar-projection") else math.nan,
        fixed_count=params.fixed_count if params.strategy == "guitar-fixed-count" else 0,
        M=graph.params.M,
        k_construction=graph.params.k_construction,
        k_search=params.k_search,
        k=params.k,
        n_queries=nq,
        recall=min(hits / (nq * truth.k), 1.0),
        qps=nq / wall,
        nn_evals=nn_mean,
        grad_evals=grad_mean,
        total_cost=nn_mean + 2 * grad_mean,
        hops=hops / nq,
        tie_credits=ties,
        wall_time_s=wall,
        dataset_fingerprint=graph.fingerprint.hex(),
    )


class _RecordWriter:
    """Appends records to one CSV per strategy, flushing after every row."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._files = {}

    def write(self, rec: RunRecord) -> None:
        if rec.strategy not in self._files:
            fh = open(self.dir / f"{rec.strategy}.csv", "w", newline="")
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            w.writeheader()
            self._files[rec.strategy] = (fh, w)
        fh, w = self._files[rec.strategy]
        w.writerow(_record_row(rec))
        fh.flush()

    def close(self) -> None:
        for fh, _ in self._files.values():
            fh.close()


def _record_row(rec: RunRecord) -> dict:
    row = asdict(rec)
    for k, v in row.items():
        if isinstance(v, float):
            row[k] = repr(v)
    return row


def run_sweep(grid: SweepGrid, data: VectorDataset, measure: MeasureSpec, truth: GroundTruth,
              queries: VectorDataset | None = None, out_dir=None, threads: int = 1,
              graphs: dict | None = None) -> list[RunRecord]:
    """One record per (graph params, search params) grid point.

    Graphs are built once per (M, k_construction) and shared across strategies;
    pass ``graphs`` to reuse prebuilt ones.  With ``out_dir`` every record is
    flushed to disk as soon as it is produced.
    """
    if queries is None:
        if grid.queries is None:
            raise ValueError("no queries given and grid.queries is unset")
        queries = load_dataset(grid.queries)
    if len(truth) != len(queries) or truth.k != grid.k:
        raise ValueError(f"ground truth ({len(truth)} x {truth.k}) does not match queries ({len(queries)}) and k={grid.k}")
    graphs = {} if graphs is None else graphs
    writer = _RecordWriter(out_dir) if out_dir is not None else None
    records = []
    try:
        for M in grid.M:
            for kc in grid.k_construction:
                if kc < M:
                    continue
                key = (M, kc)
                if key not in graphs:
                    log.info("building graph M=%d k_construction=%d", M, kc)
                    graphs[key] = build_graph(data, GraphParams(M, kc), selection=grid.selection)
                graph = graphs[key]
                for params in grid.search_params():
                    rec = run_queries(graph, data, measure, queries, truth, params, threads)
                    log.info("%s k_search=%d recall=%.3f total=%.1f", rec.label, rec.k_search, rec.recall, rec.total_cost)
                    records.append(rec)
                    if writer:
                        writer.write(rec)
    finally:
        if writer:
            writer.close()
    return records


def read_records(paths) -> list[RunRecord]:
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    types = {f.name: f.type for f in fields(RunRecord)}
    out = []
    for p in paths:
        with open(p, newline="") as fh:
            for row in csv.DictReader(fh):
                vals = {}
                for k in RECORD_FIELDS:
                    t = types[k]
                    if t in ("int", int):
                        vals[k] = int(row[k])
                    elif t in ("float", float):
                        vals[k] = float(row[k])
                    else:
                        vals[k] = row[k]
                out.append(RunRecord(**vals))
    return out


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(_record_row(r))


@dataclass(frozen=True)
class ParetoPoint:
    bucket_upper: float
    value: float
    recall: float
    k_search: int


@dataclass
class ParetoCurve:
    metric: str
    label: str
    max_recall: float
    points: list[ParetoPoint]

    def best_at(self, level: float) -> ParetoPoint | None:
        """Best point whose own recall reaches ``level``."""
        ok = [p for p in self.points if p.recall >= level]
        if not ok:
            return None
        better = max if self.metric == "qps" else min
        return better(ok, key=lambda p: p.value)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "label": self.label, "max_recall": self.max_recall,
                "points": [asdict(p) for p in self.points]}


def pareto_curve(records, metric: str = "qps", label: str = "") -> ParetoCurve:
    """Split [0, max recall] into 100 even buckets and keep the best metric per bucket.

    Bucket i covers ((i-1)w, iw] with w = max_recall / 100 (the first also takes
    recall 0).  ``qps`` keeps the maximum, ``total_cost`` the minimum; empty
    buckets are dropped.
    """
    records = list(records)
    if not records:
        raise ValueError("pareto_curve needs at least one record")
    if metric not in ("qps", "total_cost"):
        raise ValueError(f"unknown metric {metric!r}")
    top = max(r.recall for r in records)
    bounds = [top * i / N_BUCKETS for i in range(1, N_BUCKETS + 1)]
    bounds[-1] = top
    bounds = np.array(bounds)
    best: dict[int, RunRecord] = {}
    for r in records:
        b = int(np.searchsorted(bounds, r.recall, side="left")) if top > 0 else N_BUCKETS - 1
        b = min(b, N_BUCKETS - 1)
        cur = best.get(b)
        val = getattr(r, metric)
        if cur is None:
            best[b] = r
        elif metric == "qps" and val > cur.qps:
            best[b] = r
        elif metric == "total_cost" and val < cur.total_cost:
            best[b] = r
    points = [ParetoPoint(float(bounds[b]), float(getattr(r, metric)), r.recall, r.k_search)
              for b, r in sorted(best.items())]
    return ParetoCurve(metric, label, top, points)


def curves_by_label(records, metric: str = "qps") -> dict[str, ParetoCurve]:
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.label, []).append(r)
    return {lab: pareto_curve(rs, metric, lab) for lab, rs in groups.items()}


@dataclass(frozen=True)
class BreakdownRow:
    label: str
    level: float
    reachable: bool
    nn: float = math.nan
    grad: float = math.nan
    total: float = math.nan
    qps: float = math.nan
    recall: float = math.nan
    k_search: int = 0


def breakdown_table(records, recall_levels) -> list[BreakdownRow]:
    """Per strategy label and recall level, the cheapest record (by total cost) reaching that level."""
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(r.label, []).append(r)
    rows = []
    for lab in sorted(groups):
        for level in recall_levels:
            ok = [r for r in groups[lab] if r.recall >= level]
            if not ok:
                rows.append(BreakdownRow(lab, level, False))
                continue
            r = min(ok, key=lambda r: (r.total_cost, r.k_search))
            total = r.nn_evals + 2 * r.grad_evals
            if not math.isclose(total, r.total_cost, rel_tol=1e-12, abs_tol=1e-12):
                raise ValueError(f"{lab}: total {r.total_cost} != #NN + 2 #Grad = {total}")
            rows.append(BreakdownRow(lab, level, True, r.nn_evals, r.grad_evals, total, r.qps, r.recall, r.k_search))
    return rows


def write_json(obj, path) -> None:
    def conv(o):
        if isinstance(o, (ParetoCurve,)):
            return o.to_dict()
        if isinstance(o, BreakdownRow):
            return asdict(o)
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(obj, fh, default=conv, indent=2)
