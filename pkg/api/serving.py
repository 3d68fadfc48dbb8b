"""
Serving state for the API: a trained run loaded once from TABR_RUN_DIR.
"""

import logging
import os
import threading
from pathlib import Path

import joblib
import numpy as np
from fastapi import HTTPException

from api.schemas import RowInput
from config import settings
from models.candidate_store import CandidateStore
from models.enums import Task
from models.tabr import TabRModel
from services.candidate_service import CandidateService
from services.checkpoint_service import CheckpointService
from services.data_pipeline import DataService, Preprocessor
from services.errors import ConfigError, TabRError
from services.evaluation_service import EvaluationService
from services.experiment_service import CHECKPOINT_FILE, PREPROCESSOR_FILE
from services.model_service import ModelService

logger = logging.getLogger(__name__)


class ServingState:
    """Model, preprocessor and candidate store; additions are serialized, reads run concurrently."""

    def __init__(self, model: TabRModel, preprocessor: Preprocessor, store: CandidateStore | None,
                 eval_batch_size: int = 1024):
        self.model = model
        self.preprocessor = preprocessor
        self.store = store
        self.eval_batch_size = eval_batch_size
        self._write_lock = threading.Lock()

    @classmethod
    def from_run_dir(cls, run_dir: str | Path) -> "ServingState":
        run_dir = Path(run_dir)
        checkpoint = CheckpointService.load(run_dir / CHECKPOINT_FILE)
        try:
            preprocessor = joblib.load(run_dir / PREPROCESSOR_FILE)
        except FileNotFoundError:
            raise ConfigError(f"missing {PREPROCESSOR_FILE} in {run_dir}") from None
        logger.info(f"Serving {checkpoint.model.config.kind.value} from {run_dir}")
        return cls(checkpoint.model, preprocessor, checkpoint.candidate_store)

    def features(self, rows: list[RowInput]) -> np.ndarray:
        for part in ("num", "bin", "cat"):
            if len({len(getattr(r, part)) for r in rows}) > 1:
                raise ConfigError(f"rows differ in the number of '{part}' values")
        return DataService.apply_preprocessor(
            self.preprocessor,
            np.array([r.num for r in rows], dtype=np.float64).reshape(len(rows), -1),
            np.array([r.bin for r in rows], dtype=np.float64).reshape(len(rows), -1),
            np.array([r.cat for r in rows], dtype=np.int64).reshape(len(rows), -1),
        )

    def predict(self, rows: list[RowInput]) -> dict:
        features = self.features(rows)
        store = self.store
        if store is not None:
            outputs = CandidateService.predict(self.model, store, features, self.eval_batch_size)
        elif self.model.uses_retrieval:
            raise ConfigError("the loaded run has no candidate store")
        else:
            outputs, _ = ModelService.predict(self.model, features, batch_size=self.eval_batch_size)
        task = self.model.task
        predictions = EvaluationService.outputs_to_predictions(
            outputs, task, self.preprocessor.target_mean, self.preprocessor.target_std
        )
        probabilities = None
        if task is Task.BINCLASS:
            probabilities = np.stack([1.0 - predictions, predictions], axis=1).tolist()
        elif task is Task.MULTICLASS:
            probabilities = predictions.tolist()
        labels = EvaluationService.predictions_to_labels(predictions, task)
        return {
            "predictions": [float(v) for v in labels],
            "probabilities": probabilities,
            "candidates": 0 if store is None else store.size,
            "version": self.model.version(),
        }

    def add_candidates(self, rows: list[RowInput], labels: list[float]) -> dict:
        if self.store is None:
            raise ConfigError("the loaded run has no candidate store")
        if len(rows) != len(labels):
            raise ConfigError(f"{len(rows)} rows but {len(labels)} labels")
        features = self.features(rows)
        training_labels = DataService.transform_target(self.preprocessor, np.asarray(labels))
        if self.model.task.is_classification and not np.array_equal(training_labels, np.asarray(labels)):
            raise ConfigError("classification labels must be integer class indices")
        with self._write_lock:
            self.store = CandidateService.add_candidates(self.store, features, training_labels, self.model)
        return self.metadata()

    def metadata(self) -> dict:
        return {
            "algorithm": self.model.config.kind.value,
            "task": self.model.task.value,
            "n_classes": self.model.n_classes,
            "size": 0 if self.store is None else self.store.size,
            "version": self.model.version(),
        }


_state: ServingState | None = None
_state_lock = threading.Lock()


def get_serving_state() -> ServingState:
    """Dependency returning the process-wide serving state, loading it on first use."""
    global _state
    with _state_lock:
        if _state is None:
            run_dir = os.getenv("TABR_RUN_DIR", settings.TABR_RUN_DIR)
            try:
                _state = ServingState.from_run_dir(run_dir)
            except TabRError as e:
                raise HTTPException(status_code=503, detail=f"No model loaded: {e}") from None
        return _state


def optional_serving_state() -> ServingState | None:
    """Like ``get_serving_state`` but None when no run can be loaded."""
    try:
        return get_serving_state()
    except HTTPException:
        return None
