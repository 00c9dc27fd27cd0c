"""Exact top-k by exhaustive scoring."""

from __future__ import annotations

import numpy as np

from .dataset import GroundTruth, VectorDataset
from .measure import MeasureSpec, evaluate_batch
from .search import TopKResult


def brute_force_topk(dataset: VectorDataset, measure: MeasureSpec, q, k: int) -> TopKResult:
    """Score all base vectors and return the k best; equal scores go to the lower index."""
    n = dataset.count
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    scores = evaluate_batch(measure, dataset.f64, q)
    order = np.lexsort((np.arange(n), -scores))[:k]
    return TopKResult(order.astype(np.int64), scores[order], k)


def build_groundtruth(dataset: VectorDataset, queries: VectorDataset, measure: MeasureSpec, k: int) -> GroundTruth:
    if len(queries) == 0:
        return GroundTruth(np.zeros((0, k), dtype=np.int64), np.zeros((0, k)))
    rows = [brute_force_topk(dataset, measure, q, k) for q in queries.f64]
    return GroundTruth(np.stack([r.indices for r in rows]), np.stack([r.scores for r in rows]))
