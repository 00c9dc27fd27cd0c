"""Best-first search on a proximity graph under a ranking measure.

``search_baseline`` scores every unvisited neighbour of each frontier.  The
gradient-pruned variants compute one gradient at the frontier, rank its
unvisited neighbours by their offset's agreement with that gradient, and score
only a small probable prefix of that ranking.  Everything
else (queue, visited set, termination, result pool) is shared, so with pruning
disabled the two produce the same visited set and the same top-k.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import VectorDataset
from .graph import ProximityGraph
from .measure import CountingMeasure, MeasureError, MeasureSpec

STRATEGIES = ("baseline", "guitar-angle", "guitar-projection", "guitar-fixed-count")
VARIANTS = ("angle", "projection")

GRAD_EPS = 1e-12


class DegenerateGradient(ArithmeticError):
    """The gradient at the frontier is (numerically) zero, so no ranking exists."""


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    k_search: int = 64
    strategy: str = "baseline"
    alpha: float = 1.01
    fixed_count: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.k < 1 or self.k_search < 1:
            raise ValueError("k and k_search must be positive")
        if self.k > self.k_search:
            raise ValueError(f"k ({self.k}) must not exceed k_search ({self.k_search})")
        if not self.alpha >= 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.fixed_count < 1:
            raise ValueError("fixed_count must be positive")

    @property
    def label(self) -> str:
        if self.strategy == "baseline":
            return "baseline"
        if self.strategy == "guitar-fixed-count":
            return f"guitar-fixed-{self.fixed_count}"
        return f"{self.strategy}-{self.alpha:g}"


@dataclass
class SearchStats:
    nn_evals: int = 0
    grad_evals: int = 0
    hops: int = 0
    pruned_neighbors: int = 0

    @property
    def total_cost(self) -> int:
        # a gradient is one forward plus one backward pass
        return self.nn_evals + 2 * self.grad_evals


@dataclass(frozen=True)
class TopKResult:
    indices: np.ndarray
    scores: np.ndarray
    k: int

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.scores.tolist()))

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class CandidateSet:
    """Neighbours ordered best-first by ``keys`` (angles ascending or projections descending)."""

    indices: np.ndarray
    keys: np.ndarray
    variant: str

    @property
    def theta(self) -> float:
        return float(self.keys[0]) if len(self.keys) else math.nan

    def __len__(self) -> int:
        return len(self.indices)

    def head(self, m: int) -> "CandidateSet":
        return CandidateSet(self.indices[:m], self.keys[:m], self.variant)


@dataclass
class Expansion:
    frontier: int
    neighbors: np.ndarray
    ranked: CandidateSet | None
    probable: np.ndarray
    evaluated: np.ndarray


@dataclass
class SearchTrace:
    """Optional per-query log: vertices in the order they were scored, and every expansion."""

    visited: list[int] = field(default_factory=list)
    expansions: list[Expansion] = field(default_factory=list)


def _rows(dataset) -> np.ndarray:
    if isinstance(dataset, VectorDataset):
        return dataset.f64
    return np.ascontiguousarray(dataset, dtype=np.float64)


def _counting(measure) -> CountingMeasure:
    return measure if isinstance(measure, CountingMeasure) else CountingMeasure(measure)


def rank_neighbors(measure, dataset, frontier: int, q, neighbors, variant: str = "angle") -> CandidateSet:
    """Order ``neighbors`` of ``frontier`` by the direction of df/dx at the frontier.

    Costs exactly one gradient computation and no forward evaluations.  Angle
    keys are ``arccos(g.(x'-x) / (|g||x'-x|))`` (ascending); projection keys are
    ``g.(x'-x) / |g|`` (descending).  A neighbour sitting exactly on the
    frontier gets the worst key.  Equal keys keep the lower vertex first.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown ranking variant {variant!r}")
    cm = _counting(measure)
    data = _rows(dataset)
    q = np.asarray(q, dtype=np.float64)
    nbrs = np.asarray(neighbors, dtype=np.int64)
    g = cm.evaluate_with_grad(data[frontier], q).grad
    gnorm = math.sqrt(float(g @ g))
    if not gnorm > GRAD_EPS:
        raise DegenerateGradient(f"|grad| = {gnorm:g} at vertex {frontier}")
    keys = np.empty(nbrs.shape[0])
    _kernels.neighbor_keys(data, frontier, nbrs, g, gnorm, variant == "angle", keys)
    order = np.lexsort((nbrs, keys if variant == "angle" else -keys))
    return CandidateSet(nbrs[order], keys[order], variant)


def prune_neighbors(candidates: CandidateSet, alpha: float, variant: str | None = None) -> CandidateSet:
    """Keep the ranked neighbours within tolerance ``alpha`` of the best key.

    angle: keys <= alpha * theta.  projection: keys >= theta / alpha, or only
    the best one when theta <= 0.  ``alpha = inf`` keeps everything.
    """
    variant = variant or candidates.variant
    if not alpha >= 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if len(candidates) == 0 or math.isinf(alpha):
        return candidates
    theta = candidates.theta
    keys = candidates.keys
    if variant == "angle":
        keep = int(np.count_nonzero(keys <= alpha * theta))
    elif variant == "projection":
        if theta <= 0.0:
            keep = 1
        else:
            keep = int(np.count_nonzero(keys >= theta / alpha))
    else:
        raise ValueError(f"unknown ranking variant {variant!r}")
    # keys are sorted, so the survivors are a prefix
    return candidates.head(max(keep, 1))


def _check_query(spec: MeasureSpec, data: np.ndarray, q) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise MeasureError(f"query must be 1-d, got shape {q.shape}")
    if spec.dim is not None and q.shape[0] != spec.dim:
        raise MeasureError(f"dimension mismatch: measure expects {spec.dim}, query has {q.shape[0]}")
    if data.shape[1] != q.shape[0]:
        raise MeasureError(f"dimension mismatch: data has dim {data.shape[1]}, query has {q.shape[0]}")
    return q


def _best_first(graph: ProximityGraph, dataset, spec: MeasureSpec, q, params: SearchParams,
                pruner, variant: str, trace: SearchTrace | None):
    data = _rows(dataset)
    q = _check_query(spec, data, q)
    if len(graph) != data.shape[0]:
        raise ValueError(f"graph has {len(graph)} vertices, dataset has {data.shape[0]}")
    cm = CountingMeasure(spec)
    stats = SearchStats()
    k_search = params.k_search
    visited = np.zeros(len(graph), dtype=bool)

    start = graph.entry_point
    first = np.array([start], dtype=np.int64)
    s0 = float(cm.evaluate_rows(data, first, q)[0])
    visited[start] = True
    if trace is not None:
        trace.visited.append(start)
    cand = [(-s0, start)]
    # min-heap whose top is the worst kept result (lowest score, then highest index)
    pool = [(s0, -start)]

    while cand:
        neg, v = heapq.heappop(cand)
        if len(pool) >= k_search and -neg < pool[0][0]:
            break
        stats.hops += 1
        nbrs = graph.neighbors(v)
        ranked = None
        if pruner is None or not len(nbrs):
            probable = nbrs
        elif visited[nbrs].all():
            # nothing the pruner keeps could be scored; skip the gradient
            probable = nbrs[:0]
        else:
            try:
                ranked = rank_neighbors(cm, data, v, q, nbrs[~visited[nbrs]], variant)
                probable = pruner(ranked).indices
            except DegenerateGradient:
                probable = nbrs
            stats.pruned_neighbors += len(nbrs) - len(probable)

        fresh = probable[~visited[probable]]
        if trace is not None:
            trace.expansions.append(Expansion(v, nbrs, ranked, probable, fresh))
        if not len(fresh):
            continue
        visited[fresh] = True
        scores = cm.evaluate_rows(data, fresh, q)
        for s, u in zip(scores.tolist(), fresh.tolist()):
            heapq.heappush(cand, (-s, u))
            if len(pool) < k_search:
                heapq.heappush(pool, (s, -u))
            elif (s, -u) > pool[0]:
                heapq.heapreplace(pool, (s, -u))
            if trace is not None:
                trace.visited.append(u)

    stats.nn_evals = cm.nn_evals
    stats.grad_evals = cm.grad_evals
    best = sorted(pool, reverse=True)[: params.k]
    result = TopKResult(
        np.array([-u for _, u in best], dtype=np.int64),
        np.array([s for s, _ in best], dtype=np.float64),
        params.k,
    )
    return result, stats


def search_baseline(graph, dataset, measure: MeasureSpec, q, params: SearchParams,
                    trace: SearchTrace | None = None) -> tuple[TopKResult, SearchStats]:
    """Greedy best-first search scoring every unvisited neighbour (no gradients)."""
    return _best_first(graph, dataset, measure, q, params, None, "angle", trace)


def search_guitar(graph, dataset, measure: MeasureSpec, q, params: SearchParams,
                  trace: SearchTrace | None = None) -> tuple[TopKResult, SearchStats]:
    """Gradient-ranked search with adaptive (tolerance ``alpha``) pruning.

    Uses projection ranking when ``params.strategy`` is ``guitar-projection``,
    angle ranking otherwise.
    """
    variant = "projection" if params.strategy == "guitar-projection" else "angle"
    alpha = params.alpha
    return _best_first(graph, dataset, measure, q, params,
                       lambda ranked: prune_neighbors(ranked, alpha, variant), variant, trace)


def search_guitar_fixed(graph, dataset, measure: MeasureSpec, q, params: SearchParams,
                        trace: SearchTrace | None = None, variant: str = "angle") -> tuple[TopKResult, SearchStats]:
    """Gradient-ranked search keeping the top ``params.fixed_count`` neighbours."""
    m = params.fixed_count
    return _best_first(graph, dataset, measure, q, params, lambda ranked: ranked.head(m), variant, trace)


def search(graph, dataset, measure: MeasureSpec, q, params: SearchParams,
           trace: SearchTrace | None = None) -> tuple[TopKResult, SearchStats]:
    if params.strategy == "baseline":
        return search_baseline(graph, dataset, measure, q, params, trace)
    if params.strategy == "guitar-fixed-count":
        return search_guitar_fixed(graph, dataset, measure, q, params, trace)
    return search_guitar(graph, dataset, measure, q, params, trace)
