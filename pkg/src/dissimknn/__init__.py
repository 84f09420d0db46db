"""Dissimilarity-adjusted Jaccard/Sorensen similarities for kNN top-N recommendation."""

__version__ = "0.1.0"

from .dataset import (
    ColumnFormat,
    Dataset,
    DatasetStats,
    InteractionRecord,
    build_dataset,
    dataset_stats,
    parse_interactions,
)
from .evaluation import (
    EvalReport,
    SplitPair,
    diversity_at_n,
    holdout_split,
    lambda_sweep,
    paired_significance,
    precision_at_n,
)
from .exceptions import ConfigurationError, DataError, EmptyInputError, InsufficientDataError
from .knn import NeighborModel, RecommendationList, fit_model, recommend_all, recommend_top_n
from .similarity import MeasureSpec, PairCounts, measure, pair_counts, preset, top_k_neighbors

