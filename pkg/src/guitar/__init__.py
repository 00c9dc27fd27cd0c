"""Gradient-pruned best-first search on proximity graphs for neural ranking measures."""

from .bench import (
    BreakdownRow,
    ParetoCurve,
    RunRecord,
    SweepGrid,
    breakdown_table,
    pareto_curve,
    read_records,
    recall,
    run_sweep,
)
from .dataset import (
    DatasetError,
    GroundTruth,
    VectorDataset,
    generate_synthetic,
    load_dataset,
    load_groundtruth,
    save_dataset,
    save_groundtruth,
)
from .graph import GraphError, GraphParams, ProximityGraph, build_graph, load_graph, save_graph
from .measure import (
    CountingMeasure,
    MeasureError,
    MeasureSpec,
    evaluate,
    evaluate_batch,
    evaluate_with_grad,
    load_measure,
    make_random_measure,
    save_measure,
)
from .oracle import brute_force_topk, build_groundtruth
from .search import (
    CandidateSet,
    SearchParams,
    SearchStats,
    TopKResult,
    prune_neighbors,
    rank_neighbors,
    search,
    search_baseline,
    search_guitar,
    search_guitar_fixed,
)

__version__ = "0.1.0"
