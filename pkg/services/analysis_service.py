"""
Post-training analyses: entropy of the average attention distribution and
the value-module projection ablation.
"""

import logging

import numpy as np

from models.context import ContextRecord
from models.dataset import PreparedData
from models.enums import ValueKind
from models.tabr import TabRModel
from services import autodiff as ad
from services.errors import ConfigError, UnsupportedTaskError
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from services.retrieval import RetrievalService
from services.seeding import stream

logger = logging.getLogger(__name__)

SUBSPACES = ("none", "label-line", "random-unit")


def entropy(distribution: np.ndarray) -> float:
    """Natural-log entropy; zero-probability atoms contribute nothing."""
    p = np.asarray(distribution, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def uniform_entropy(n_atoms: int) -> float:
    if n_atoms < 1:
        raise ConfigError("a distribution needs at least one atom")
    return float(np.log(n_atoms))


def average_distribution(record: ContextRecord, n_candidates: int) -> np.ndarray:
    """
    Mean over objects of each object's distribution over candidates. Weight an
    object puts on itself goes to one extra atom (index ``n_candidates``)
    shared by all objects.
    """
    if record.n_objects == 0:
        raise ConfigError("no objects to average over")
    totals = np.zeros(n_candidates + 1, dtype=np.float64)
    np.add.at(totals, record.indices.reshape(-1), record.weights.reshape(-1).astype(np.float64))
    if record.self_weights is not None:
        totals[n_candidates] += float(record.self_weights.astype(np.float64).sum())
    return totals / record.n_objects


class AnalysisService:

    @staticmethod
    def attention_entropy(
        model: TabRModel,
        data: PreparedData,
        eval_idx: np.ndarray | None = None,
        candidate_idx: np.ndarray | None = None,
        batch_size: int = 512,
    ) -> float:
        """Entropy of the attention distribution averaged over the evaluation objects."""
        if not model.uses_retrieval:
            raise ConfigError("attention entropy needs a retrieval model")
        eval_idx = data.splits["test"] if eval_idx is None else np.asarray(eval_idx)
        candidate_idx = data.splits["train"] if candidate_idx is None else np.asarray(candidate_idx)
        with ad.precision(model.dtype):
            candidates = RetrievalService.encode_candidates(model, data.features[candidate_idx])
        _, record = ModelService.predict(
            model, data.features[eval_idx], candidates, data.labels[candidate_idx], batch_size=batch_size
        )
        value = entropy(average_distribution(record, len(candidate_idx)))
        logger.info(
            f"Attention entropy {value:.3f} over {len(candidate_idx)} candidates "
            f"(uniform {uniform_entropy(len(candidate_idx)):.3f})"
        )
        return value

    @staticmethod
    def projection_direction(model: TabRModel, subspace: str, seed: int = 0) -> np.ndarray | None:
        """
        Unit vector whose component is removed from the value correction:
        the direction of the label embedding, or a random direction. A zero
        label embedding yields the zero vector (nothing is removed).
        """
        if subspace not in SUBSPACES:
            raise ConfigError(f"unknown subspace '{subspace}', expected one of {', '.join(SUBSPACES)}")
        if subspace == "none":
            return None
        d = model.config.d
        if subspace == "label-line":
            w = model.params["retrieval.label.weight"].data.reshape(-1).astype(np.float64)
        else:
            w = stream(seed, "ablation").standard_normal(d)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            logger.warning(f"zero {subspace} direction; projection removal is a no-op")
            return np.zeros(d)
        return w / norm

    @staticmethod
    def value_projection_ablation(
        model: TabRModel,
        data: PreparedData,
        subspace: str = "label-line",
        eval_idx: np.ndarray | None = None,
        seed: int = 0,
        batch_size: int = 512,
    ) -> float:
        """
        Test metric of a trained regression model when the component along
        ``subspace`` is removed from every context correction at inference.
        """
        if model.task.is_classification:
            raise UnsupportedTaskError("the value projection ablation is defined for regression only")
        if not model.uses_retrieval or model.config.retrieval.value is not ValueKind.WY_T:
            raise ConfigError("the value projection ablation needs a WY+T retrieval model")
        eval_idx = data.splits["test"] if eval_idx is None else np.asarray(eval_idx)
        direction = AnalysisService.projection_direction(model, subspace, seed)
        predictions = EvaluationService.predict_split(
            model, data, eval_idx, projection=direction, batch_size=batch_size
        )
        metric = EvaluationService.score(predictions, data.targets[eval_idx], data.task)
        logger.info(f"Value projection ablation ({subspace}): {metric:.5f}")
        return metric
