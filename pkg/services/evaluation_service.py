"""
Metrics, seed ensembles, the std-aware best-set rule and the kNN baseline.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit, softmax

from models.dataset import PreparedData
from models.enums import Direction, Task
from models.run_result import RunResult
from models.tabr import TabRModel
from services import autodiff as ad
from services.autodiff import Tensor
from services.errors import ConfigError
from services.model_service import ModelService
from services.retrieval import RetrievalService

logger = logging.getLogger(__name__)


class EvaluationService:

    @staticmethod
    def compute_metric(preds: np.ndarray, targets: np.ndarray, task: Task) -> float:
        """RMSE for regression (de-normalized predictions), accuracy for class predictions."""
        preds, targets = np.asarray(preds), np.asarray(targets)
        if preds.shape[0] != targets.shape[0]:
            raise ConfigError(f"{preds.shape[0]} predictions for {targets.shape[0]} targets")
        if len(targets) == 0:
            raise ConfigError("cannot compute a metric on zero rows")
        if task is Task.REGRESSION:
            diff = preds.astype(np.float64) - targets.astype(np.float64)
            return float(np.sqrt(np.mean(diff * diff)))
        return float(np.mean(preds == targets))

    @staticmethod
    def outputs_to_predictions(outputs: np.ndarray, task: Task, target_mean: float | None = None,
                               target_std: float | None = None) -> np.ndarray:
        """Raw model outputs -> values in label space, P(class 1), or class probabilities."""
        outputs = np.asarray(outputs, dtype=np.float64)
        if task is Task.REGRESSION:
            values = outputs.reshape(-1)
            if target_std is not None:
                values = values * target_std + target_mean
            return values
        if task is Task.BINCLASS:
            return expit(outputs.reshape(-1))
        return softmax(outputs, axis=1)

    @staticmethod
    def predictions_to_labels(predictions: np.ndarray, task: Task) -> np.ndarray:
        if task is Task.REGRESSION:
            return predictions
        if task is Task.BINCLASS:
            return (predictions >= 0.5).astype(np.int64)
        return np.argmax(predictions, axis=1)

    @staticmethod
    def score(predictions: np.ndarray, targets: np.ndarray, task: Task) -> float:
        labels = EvaluationService.predictions_to_labels(predictions, task)
        return EvaluationService.compute_metric(labels, targets, task)

    @staticmethod
    def predict_split(
        model: TabRModel,
        data: PreparedData,
        eval_idx: np.ndarray,
        candidate_idx: np.ndarray | None = None,
        projection: np.ndarray | None = None,
        batch_size: int = 512,
    ) -> np.ndarray:
        """Predictions (label space) for ``eval_idx`` with a full scan over the candidate rows."""
        features = data.features[eval_idx]
        if not model.uses_retrieval:
            outputs, _ = ModelService.predict(model, features, batch_size=batch_size)
        else:
            candidate_idx = data.splits["train"] if candidate_idx is None else candidate_idx
            with ad.precision(model.dtype):
                candidates = RetrievalService.encode_candidates(model, data.features[candidate_idx])
            outputs, _ = ModelService.predict(
                model, features, candidates, data.labels[candidate_idx], batch_size=batch_size, projection=projection
            )
        return EvaluationService.outputs_to_predictions(outputs, data.task, data.target_mean, data.target_std)

    @staticmethod
    def evaluate(model: TabRModel, data: PreparedData, split: str = "test", candidate_idx: np.ndarray | None = None,
                 batch_size: int = 512) -> float:
        eval_idx = data.splits[split]
        predictions = EvaluationService.predict_split(model, data, eval_idx, candidate_idx, batch_size=batch_size)
        return EvaluationService.score(predictions, data.targets[eval_idx], data.task)

    @staticmethod
    def ensemble_evaluate(
        prediction_sets: list[np.ndarray],
        targets: np.ndarray,
        task: Task,
        group_size: int = 5,
        n_groups: int | None = None,
    ) -> float:
        """
        Average predictions within consecutive groups of seeds, score each group,
        return the mean group metric.
        """
        if group_size < 1 or not prediction_sets or len(prediction_sets) % group_size:
            raise ConfigError(f"{len(prediction_sets)} seed prediction sets cannot be split into groups of {group_size}")
        available = len(prediction_sets) // group_size
        n_groups = available if n_groups is None else n_groups
        if n_groups != available:
            raise ConfigError(f"expected {n_groups * group_size} seed prediction sets, got {len(prediction_sets)}")
        metrics = []
        for g in range(n_groups):
            members = prediction_sets[g * group_size:(g + 1) * group_size]
            averaged = np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in members]), axis=0)
            metrics.append(EvaluationService.score(averaged, targets, task))
        return float(np.mean(metrics))

    @staticmethod
    def best_set(results: list[RunResult], direction: Direction) -> set[str]:
        """Algorithms whose mean is within the preliminary best's std of the preliminary best."""
        if not results:
            raise ConfigError("best_set needs at least one result")
        key = (lambda r: r.mean) if direction is Direction.MINIMIZE else (lambda r: -r.mean)
        best = min(results, key=key)
        tolerance = best.std + 1e-12
        return {r.algorithm for r in results if abs(r.mean - best.mean) <= tolerance}

    @staticmethod
    def knn_predict(
        data: PreparedData,
        k: int,
        query_idx: np.ndarray | None = None,
        train_idx: np.ndarray | None = None,
        chunk_size: int = 1024,
    ) -> np.ndarray:
        """
        Brute-force Euclidean kNN over the training rows. Distance ties go to the
        lower training position; vote ties go to the lower class.

        Returns:
            Label-space values (regression) or class labels.
        """
        train_idx = data.splits["train"] if train_idx is None else np.asarray(train_idx)
        query_idx = data.splits["test"] if query_idx is None else np.asarray(query_idx)
        if k < 1 or k > len(train_idx):
            raise ConfigError(f"k={k} must be in [1, {len(train_idx)}] (training rows)")
        train_features = data.features[train_idx].astype(np.float64)
        train_targets = data.targets[train_idx]

        neighbors = []
        with ad.no_grad():
            for start in range(0, len(query_idx), chunk_size):
                queries = data.features[query_idx[start:start + chunk_size]].astype(np.float64)
                distances = ad.pairwise_sq_l2(Tensor.wrap(queries), Tensor.wrap(train_features)).data
                neighbors.append(RetrievalService.select_top_m(-distances, k))
        neighbors = np.concatenate(neighbors) if neighbors else np.zeros((0, k), dtype=np.int64)
        labels = train_targets[neighbors]

        if data.task is Task.REGRESSION:
            return labels.astype(np.float64).mean(axis=1)
        n_classes = data.n_classes or int(train_targets.max()) + 1
        votes = np.zeros((len(labels), n_classes), dtype=np.int64)
        np.add.at(votes, (np.repeat(np.arange(len(labels)), k), labels.reshape(-1).astype(np.int64)), 1)
        return np.argmax(votes, axis=1)

    @staticmethod
    def results_frame(results: list[RunResult]) -> pd.DataFrame:
        return pd.DataFrame([r.as_row() for r in results], columns=["algorithm", "dataset", "mean", "std", "values"])

    @staticmethod
    def write_results(results: list[RunResult], path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        EvaluationService.results_frame(results).to_csv(path, index=False)
        return path

    @staticmethod
    def comparison_report(results: list[RunResult], direction: Direction) -> str:
        best = EvaluationService.best_set(results, direction)
        lines = []
        for r in results:
            flag = "*" if r.algorithm in best else " "
            lines.append(f"{flag} {r.algorithm:<40} {r.dataset:<8} {r.mean:.4f} ± {r.std:.4f} (n={len(r.values)})")
        return "\n".join(lines) + "\n"
