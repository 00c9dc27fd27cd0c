"""Flat navigable-small-world proximity graph built under l2 distance.

Points are inserted in index order.  Each new point greedy-searches the partial
graph with a pool of ``k_construction`` candidates, picks up to ``M`` of them as
out-neighbours, and gets reverse links; a vertex pushed past ``M`` out-edges
re-picks from its current list.  Picking is either ``"closest"`` (the M nearest)
or ``"diverse"`` (nearest first, skipping candidates that are closer to an
already picked neighbour than to the point itself).  Equal distances resolve to
the lower index.  The ranking measure is never consulted here.
"""

from __future__ import annotations

import heapq
import logging
import os
import struct
from collections import deque
from dataclasses import dataclass
from itertools import chain

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from . import _kernels
from .dataset import VectorDataset

log = logging.getLogger(__name__)

_MAGIC = b"GGRF"
_VERSION = 1
# magic, version, n, M, k_construction, seed, entry_point, fingerprint
_HEADER = struct.Struct("<4sIIIIiI8s")


SELECTIONS = ("diverse", "closest")


class GraphError(ValueError):
    """Invalid graph parameters, file, or graph/dataset mismatch."""


@dataclass(frozen=True)
class GraphParams:
    M: int = 16
    k_construction: int = 100
    # recorded with the graph; insertion order is index order so the build
    # itself is deterministic without it
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise GraphError(f"M must be >= 1, got {self.M}")
        if self.k_construction < self.M:
            raise GraphError(f"k_construction ({self.k_construction}) must be >= M ({self.M})")


class ProximityGraph:
    """Immutable adjacency lists plus the entry point and the data fingerprint."""

    def __init__(self, adjacency, entry_point: int, params: GraphParams, fingerprint: bytes):
        adj = []
        for nbrs in adjacency:
            a = np.array(nbrs, dtype=np.int64)
            a.setflags(write=False)
            adj.append(a)
        self._adj = tuple(adj)
        self.entry_point = int(entry_point)
        self.params = params
        self.fingerprint = bytes(fingerprint)
        self._unreachable = None

    @property
    def n(self) -> int:
        return len(self._adj)

    def __len__(self) -> int:
        return len(self._adj)

    @property
    def adjacency(self) -> tuple:
        return self._adj

    def neighbors(self, v: int) -> np.ndarray:
        if not 0 <= v < len(self._adj):
            raise IndexError(f"vertex {v} out of range [0, {len(self._adj)})")
        return self._adj[v]

    def max_degree(self) -> int:
        return max((len(a) for a in self._adj), default=0)

    def reachable(self) -> np.ndarray:
        if not self._adj:
            return np.zeros(0, dtype=bool)
        return _reach_mask(self._adj, self.entry_point)

    @property
    def unreachable_count(self) -> int:
        if self._unreachable is None:
            self._unreachable = int(len(self._adj) - self.reachable().sum())
        return self._unreachable

    def __eq__(self, other):
        if not isinstance(other, ProximityGraph):
            return NotImplemented
        return (
            self.entry_point == other.entry_point
            and self.params == other.params
            and self.fingerprint == other.fingerprint
            and len(self._adj) == len(other._adj)
            and all(np.array_equal(a, b) for a, b in zip(self._adj, other._adj))
        )

    __hash__ = None


def _sqdist(data: np.ndarray, rows, x: np.ndarray) -> np.ndarray:
    diff = data[rows] - x
    return np.einsum("ij,ij->i", diff, diff)


def _order(data, rows, x) -> tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(rows, dtype=np.int64)
    d = _sqdist(data, rows, x)
    o = np.lexsort((rows, d))
    return rows[o], d[o]


def _pick(data, rows, x, m: int, selection: str) -> list[int]:
    ids, d = _order(data, rows, x)
    if selection == "closest":
        return ids[:m].tolist()
    k = _kernels.select_diverse(data, ids, d, m)
    return ids[:k].tolist()


def greedy_search_l2(adj, data: np.ndarray, x: np.ndarray, entry: int, ef: int) -> list[tuple[float, int]]:
    """Best-first l2 search from ``entry``; returns up to ``ef`` (sqdist, index) pairs, closest first."""
    d0 = float(_sqdist(data, [entry], x)[0])
    visited = {entry}
    cand = [(d0, entry)]
    # max-heap on (dist, index) via negation: top is the worst kept result
    pool = [(-d0, -entry)]
    while cand:
        d, v = heapq.heappop(cand)
        if len(pool) >= ef and (d, v) > (-pool[0][0], -pool[0][1]):
            break
        fresh = [u for u in adj[v] if u not in visited]
        if not fresh:
            continue
        visited.update(fresh)
        for du, u in zip(_sqdist(data, fresh, x).tolist(), fresh):
            if len(pool) < ef or (du, u) < (-pool[0][0], -pool[0][1]):
                heapq.heappush(cand, (du, u))
                heapq.heappush(pool, (-du, -u))
                if len(pool) > ef:
                    heapq.heappop(pool)
    return sorted((-d, -u) for d, u in pool)


def build_graph(dataset: VectorDataset, params: GraphParams = GraphParams(), selection: str = "diverse") -> ProximityGraph:
    if dataset.count == 0:
        raise GraphError("cannot build a graph over an empty dataset")
    if selection not in SELECTIONS:
        raise GraphError(f"unknown selection {selection!r}, expected one of {SELECTIONS}")
    data = dataset.f64
    n, M = dataset.count, params.M
    adj: list[list[int]] = [[] for _ in range(n)]
    entry = 0
    for i in range(1, n):
        x = data[i]
        found = greedy_search_l2(adj, data, x, entry, params.k_construction)
        chosen = _pick(data, [u for _, u in found], x, M, selection)
        adj[i] = chosen
        for u in chosen:
            nb = adj[u]
            nb.append(i)
            if len(nb) > M:
                adj[u] = _pick(data, nb, data[u], M, selection)
    _repair(adj, data, entry, M)
    graph = ProximityGraph(adj, entry, params, dataset.fingerprint)
    if graph.unreachable_count:
        log.warning("%d of %d vertices unreachable from the entry point", graph.unreachable_count, n)
    return graph


def _csr(adj) -> sp.csr_matrix:
    n = len(adj)
    lens = np.fromiter((len(a) for a in adj), dtype=np.int64, count=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    indices = np.array(list(chain.from_iterable(adj)), dtype=np.int64)
    return sp.csr_matrix((np.ones(indices.size, dtype=np.int8), indices, indptr), shape=(n, n))


def _reach_mask(adj, entry: int) -> np.ndarray:
    order = breadth_first_order(_csr(adj), entry, directed=True, return_predecessors=False)
    seen = np.zeros(len(adj), dtype=bool)
    seen[order] = True
    return seen


def _repair(adj, data, entry: int, M: int, max_donors: int = 32) -> None:
    """Link unreachable vertices from nearby reachable ones without exceeding degree M.

    A donor with spare degree just gains the edge.  A full donor may give up its
    farthest out-edge instead, but only when the dropped neighbour has another
    reachable in-neighbour and a fresh traversal confirms nothing is lost.
    """
    seen = _reach_mask(adj, entry)
    for v in np.flatnonzero(~seen).tolist():
        if seen[v]:
            continue
        reach = np.flatnonzero(seen)
        d = _sqdist(data, reach, data[v])
        donors = reach[np.lexsort((reach, d))[:max_donors]].tolist()
        indeg = None
        for u in donors:
            if len(adj[u]) < M:
                adj[u].append(v)
                _mark_from(adj, v, seen)
                break
            if indeg is None:
                indeg = np.bincount(_csr(adj)[seen].indices, minlength=len(adj))
            nbrs = adj[u]
            dn = _sqdist(data, nbrs, data[u])
            for pos in np.lexsort((-np.asarray(nbrs), -dn)).tolist():
                w = nbrs[pos]
                if indeg[w] < 2:
                    continue
                nbrs[pos] = v
                trial = _reach_mask(adj, entry)
                if np.all(trial[seen]):
                    seen = trial
                    break
                nbrs[pos] = w
            if seen[v]:
                break


def _mark_from(adj, v: int, seen: np.ndarray) -> None:
    seen[v] = True
    todo = deque([v])
    while todo:
        w = todo.popleft()
        for u in adj[w]:
            if not seen[u]:
                seen[u] = True
                todo.append(u)


def save_graph(graph: ProximityGraph, path: str | os.PathLike) -> None:
    p = graph.params
    parts = [_HEADER.pack(_MAGIC, _VERSION, graph.n, p.M, p.k_construction, p.seed, graph.entry_point, graph.fingerprint)]
    for nbrs in graph.adjacency:
        parts.append(struct.pack("<I", len(nbrs)))
        parts.append(nbrs.astype("<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_graph(path: str | os.PathLike, dataset: VectorDataset | None = None) -> ProximityGraph:
    """Load a graph; if ``dataset`` is given its fingerprint must match the graph's."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise GraphError(f"{path}: truncated header")
    magic, version, n, M, kc, seed, entry, fp = _HEADER.unpack_from(buf)
    if magic != _MAGIC:
        raise GraphError(f"{path}: not a graph file")
    if version != _VERSION:
        raise GraphError(f"{path}: unsupported graph version {version}")
    ints = np.frombuffer(buf, dtype="<u4", offset=_HEADER.size)
    adj, pos = [], 0
    for _ in range(n):
        if pos >= ints.size:
            raise GraphError(f"{path}: truncated adjacency")
        deg = int(ints[pos])
        nbrs = ints[pos + 1: pos + 1 + deg]
        if nbrs.size != deg:
            raise GraphError(f"{path}: truncated adjacency")
        adj.append(nbrs.astype(np.int64))
        pos += 1 + deg
    if pos != ints.size:
        raise GraphError(f"{path}: trailing bytes after adjacency")
    for v, nbrs in enumerate(adj):
        if nbrs.size and (nbrs.max() >= n or np.any(nbrs == v)):
            raise GraphError(f"{path}: vertex {v} has an out-of-range neighbor or self-loop")
    if dataset is not None:
        if dataset.fingerprint != fp or dataset.count != n:
            raise GraphError("graph built for different data (fingerprint mismatch)")
    return ProximityGraph(adj, entry, GraphParams(M, kc, seed), fp)
