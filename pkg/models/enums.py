"""
Enumerations shared by configs, models and services.
"""

import enum


class Task(str, enum.Enum):
    """Prediction task of a dataset."""
    BINCLASS = "binclass"
    MULTICLASS = "multiclass"
    REGRESSION = "regression"

    @property
    def is_classification(self) -> bool:
        return self is not Task.REGRESSION


class ModelKind(str, enum.Enum):
    TABR = "tabr"
    TABR_S = "tabr-s"
    MLP = "mlp"
    KNN = "knn"

    @property
    def uses_retrieval(self) -> bool:
        return self in (ModelKind.TABR, ModelKind.TABR_S)


class SimilarityKind(str, enum.Enum):
    """How a target scores a candidate."""
    DOT_QK = "dotQK"    # q^T k_i with separate query projection
    DOT_K = "dotK"      # k^T k_i, queries shared with keys
    L2_QK = "L2QK"      # -||q - k_i||^2 with separate query projection
    L2_KEY = "L2key"    # -||k - k_i||^2

    @property
    def uses_query(self) -> bool:
        return self in (SimilarityKind.DOT_QK, SimilarityKind.L2_QK)

    @property
    def is_l2(self) -> bool:
        return self in (SimilarityKind.L2_QK, SimilarityKind.L2_KEY)


class ValueKind(str, enum.Enum):
    """What a context object contributes."""
    WV = "WV"
    WY_WV = "WY+WV"
    WY_T = "WY+T"

    @property
    def uses_labels(self) -> bool:
        return self is not ValueKind.WV

    @property
    def uses_value_projection(self) -> bool:
        return self is not ValueKind.WY_T


class EmbeddingScheme(str, enum.Enum):
    NONE = "none"
    LR = "LR"
    PLR = "PLR"
    PLR_LITE = "PLR-lite"


class NumPolicy(str, enum.Enum):
    """Preprocessing of one numeric column."""
    QUANTILE = "quantile"
    STANDARDIZE = "standardize"
    NONE = "none"


class Direction(str, enum.Enum):
    """Which way a metric improves."""
    MINIMIZE = "min"
    MAXIMIZE = "max"

    def better(self, candidate: float, reference: float) -> bool:
        return candidate < reference if self is Direction.MINIMIZE else candidate > reference
