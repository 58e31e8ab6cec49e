"""metricbench: a level-playing-field benchmark harness for deep metric
learning losses, with MAP@R-family metrics, class-disjoint cross-validation,
hyperparameter search, and confidence-interval reporting."""

__version__ = "0.1.0"

from .embedcore import (
    DistanceMatrix,
    EmbeddingSet,
    LabelSet,
    NeighborRanking,
    knn,
    l2_normalize,
    pairwise_distances,
    pca_reduce,
)
from .metrics import (
    ClusterAssignment,
    MetricReport,
    cluster_quality,
    compute_report,
    kmeans,
    lag_one_autocorrelation,
    map_at_r,
    precision_at_k,
    r_precision,
)
from .dataset import LabeledData
from .synth import SyntheticSpec, synth_dataset

__all__ = [
    "DistanceMatrix", "EmbeddingSet", "LabelSet", "NeighborRanking",
    "knn", "l2_normalize", "pairwise_distances", "pca_reduce",
    "ClusterAssignment", "MetricReport", "cluster_quality", "compute_report",
    "kmeans", "lag_one_autocorrelation", "map_at_r", "precision_at_k",
    "r_precision", "LabeledData", "SyntheticSpec", "synth_dataset",
    "__version__",
]
