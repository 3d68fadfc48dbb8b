"""
Candidate store construction and online addition of labeled rows.
"""

import logging

import numpy as np

from models.candidate_store import CandidateStore, EncodedCandidates
from models.tabr import TabRModel
from services import autodiff as ad
from services.errors import ConfigError
from services.model_service import ModelService
from services.retrieval import RetrievalService

logger = logging.getLogger(__name__)


class CandidateService:

    @staticmethod
    def build_store(model: TabRModel, rows: np.ndarray, labels: np.ndarray) -> CandidateStore:
        """Encode preprocessed rows with the model's current (frozen) parameters."""
        rows, labels = CandidateService._validate(model, rows, labels)
        with ad.precision(model.dtype):
            encoded = RetrievalService.encode_candidates(model, rows)
        logger.info(f"Built candidate store with {len(labels)} rows")
        return CandidateStore(features=rows, labels=labels, encoded=encoded, version=model.version())

    @staticmethod
    def add_candidates(store: CandidateStore, rows: np.ndarray, labels: np.ndarray, model: TabRModel) -> CandidateStore:
        """Append new labeled rows; existing entries are kept as they are."""
        CandidateService.check_version(store, model)
        rows, labels = CandidateService._validate(model, rows, labels)
        if len(rows) == 0:
            return store
        with ad.precision(model.dtype):
            added = RetrievalService.encode_candidates(model, rows)
        encoded = EncodedCandidates(
            representations=np.concatenate([store.encoded.representations, added.representations]),
            keys=np.concatenate([store.encoded.keys, added.keys]),
        )
        logger.info(f"Added {len(labels)} candidates (store size {store.size} -> {store.size + len(labels)})")
        return CandidateStore(
            features=np.concatenate([store.features, rows]),
            labels=np.concatenate([store.labels, labels]),
            encoded=encoded,
            version=store.version,
        )

    @staticmethod
    def predict(model: TabRModel, store: CandidateStore, features: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Raw outputs for ``features`` retrieving over the whole store."""
        CandidateService.check_version(store, model)
        outputs, _ = ModelService.predict(model, features, store.encoded, store.labels, batch_size=batch_size)
        return outputs

    @staticmethod
    def check_version(store: CandidateStore, model: TabRModel) -> None:
        current = model.version()
        if store.version != current:
            raise ConfigError(
                f"candidate store was encoded by parameter version {store.version}, model is {current}"
            )

    @staticmethod
    def _validate(model: TabRModel, rows: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not model.uses_retrieval:
            raise ConfigError(f"{model.config.kind.value} does not retrieve; candidate stores need a TabR model")
        rows = np.asarray(rows, dtype=np.float64)
        if rows.size == 0:
            rows = np.zeros((0, model.layout.width))
        if rows.ndim != 2 or rows.shape[1] != model.layout.width:
            raise ConfigError(f"candidate rows must have width {model.layout.width}, got shape {rows.shape}")
        labels = np.asarray(labels).reshape(-1)
        if len(rows) != len(labels):
            raise ConfigError(f"{len(rows)} rows but {len(labels)} labels")
        if model.task.is_classification:
            values = labels.astype(np.float64)
            invalid = ~np.isfinite(values) | (values != np.round(values)) | (values < 0) | (values >= model.n_classes)
            if invalid.any():
                raise ConfigError(f"labels must be class indices in [0, {model.n_classes}) for {model.task.value}")
            return rows, labels.astype(np.int64)
        labels = labels.astype(np.float64)
        if not np.isfinite(labels).all():
            raise ConfigError("regression labels must be finite")
        return rows, labels
