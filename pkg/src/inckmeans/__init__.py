"""Batch and incremental K-means with a persisted result store and a
full-refit vs. incremental benchmark."""

from .bench import (
    BenchConfig,
    Basis,
    Cost,
    DeltaPoint,
    DeltaSeries,
    ThresholdEstimate,
    delta_percent,
    emit_report,
    estimate_threshold,
    load_replay,
    run_benchmark,
)
from .core import (
    FIRST_K_DISTINCT,
    Assignment,
    Cluster,
    ClusterModel,
    CostCounter,
    Metric,
    TieBreak,
    assign_point,
    distance,
    incremental_delete,
    incremental_insert,
    lloyd_fit,
    recompute_means,
    square_error,
)
from .ingest import Dataset, parse_arff, parse_csv
from .store import StoredModel, load_model, save_model

__version__ = "0.1.0"
