"""
Training loop: AdamW steps over shuffled batches, per-epoch validation with
early stopping, optional context freeze and context-change tracking.
"""

import enum
import logging
import time
from dataclasses import dataclass

import numpy as np

from config.presets import batch_size_for
from config.run_config import ModelConfig, TrainConfig
from models.context import ContextCache, ContextRecord
from models.dataset import PreparedData
from models.enums import Direction
from models.tabr import TabRModel
from models.train_log import EpochRecord, TrainLog
from services import autodiff as ad
from services.data_pipeline import DataService
from services.errors import ConfigError, DivergenceError
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from services.optimizer import AdamWHyper, AdamWState, adamw_step, default_no_decay
from services.retrieval import RetrievalService
from services.seeding import stream

logger = logging.getLogger(__name__)


class StopDecision(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"
    NEW_BEST = "new-best"


@dataclass
class EarlyStopping:
    patience: int
    direction: Direction
    best: float | None = None
    best_epoch: int | None = None
    bad_epochs: int = 0
    epochs_seen: int = 0


def early_stop_update(tracker: EarlyStopping, val_metric: float, direction: Direction | None = None) -> StopDecision:
    """
    Strict improvement resets the counter; equal-to-best counts as no
    improvement. Stops once patience + 1 consecutive epochs did not improve.
    """
    direction = direction or tracker.direction
    tracker.epochs_seen += 1
    if tracker.best is None or direction.better(val_metric, tracker.best):
        tracker.best = val_metric
        tracker.best_epoch = tracker.epochs_seen
        tracker.bad_epochs = 0
        return StopDecision.NEW_BEST
    tracker.bad_epochs += 1
    return StopDecision.STOP if tracker.bad_epochs > tracker.patience else StopDecision.CONTINUE


def delta_context(previous: ContextRecord, current: ContextRecord, m: int | None = None,
                  chunk_size: int = 1024) -> np.ndarray:
    """
    Per-object change of attention between two context records:
    novel mass on candidates that are new in ``current`` plus the increase of
    mass on the shared candidates.
    """
    if previous.indices.shape != current.indices.shape:
        raise ConfigError(f"context records differ in shape: {previous.indices.shape} vs {current.indices.shape}")
    m = current.m if m is None else m
    if current.m != m or previous.m != m:
        raise ConfigError(f"context support size must be {m}, got {previous.m} and {current.m}")

    deltas = np.empty(current.n_objects, dtype=np.float64)
    for start in range(0, current.n_objects, chunk_size):
        stop = start + chunk_size
        a_idx, b_idx = previous.indices[start:stop], current.indices[start:stop]
        a_w, b_w = previous.weights[start:stop], current.weights[start:stop]
        same = b_idx[:, :, None] == a_idx[:, None, :]
        b_shared = same.any(axis=2)
        a_shared = same.any(axis=1)
        novel = np.where(b_shared, 0.0, b_w).sum(axis=1)
        increased = np.maximum(np.where(b_shared, b_w, 0.0).sum(axis=1) - np.where(a_shared, a_w, 0.0).sum(axis=1), 0.0)
        deltas[start:stop] = novel + increased
    return deltas


class TrainingService:

    @staticmethod
    def train(
        model_config: ModelConfig,
        data: PreparedData,
        train_config: TrainConfig,
        train_idx: np.ndarray | None = None,
    ) -> tuple[TabRModel, TrainLog]:
        """
        Train from scratch and return the model restored to its best validation epoch.

        Args:
            model_config: Architecture (TabR or MLP).
            data: Preprocessed dataset.
            train_config: Optimization, stopping and freeze settings.
            train_idx: Training rows; defaults to the training split. Candidates
                are always these rows.
        """
        tc = train_config
        train_idx = data.splits["train"] if train_idx is None else np.asarray(train_idx)
        val_idx = data.splits.get("val")
        if len(train_idx) == 0 or val_idx is None or len(val_idx) == 0:
            raise ConfigError("training needs non-empty train and val splits")
        batch_size = tc.batch_size or batch_size_for(data.name)

        with ad.precision(tc.dtype):
            model = ModelService.create_model(model_config, data.layout, data.task, data.n_classes, tc.seed)
            retrieval = model.uses_retrieval
            train_features = data.features[train_idx]
            train_labels = data.labels[train_idx]
            n_train = len(train_idx)

            state = AdamWState.create(model.params, AdamWHyper(lr=tc.lr, weight_decay=tc.weight_decay))
            tracker = EarlyStopping(patience=tc.patience, direction=data.direction)
            log = TrainLog()
            best_snapshot = model.snapshot()

            cache: ContextCache | None = None
            previous_record = None
            if retrieval and tc.track_delta_context:
                previous_record = TrainingService.collect_train_contexts(model, train_features, train_labels)
            if retrieval and tc.freeze_after == 0:
                cache = RetrievalService.freeze_contexts(model, train_features, epoch=0)
                log.freeze_epoch = 0

            logger.info(
                f"Training {model_config.kind.value}: {n_train} train rows, batch {batch_size}, "
                f"max epochs {tc.max_epochs or 'unbounded'}"
            )
            epoch = 0
            while tc.max_epochs is None or epoch < tc.max_epochs:
                epoch += 1
                dropout_rng = stream(tc.seed, "dropout", epoch)
                candidate_rng = stream(tc.seed, "candidates", epoch)
                batches = DataService.make_batches(np.arange(n_train), batch_size, shuffle=True, seed=tc.seed, epoch=epoch)

                loss_sum, scored = 0.0, 0
                started = time.perf_counter()
                for step, positions in enumerate(batches):
                    loss, n_scored = TrainingService._step(
                        model, state, positions, train_features, train_labels, cache, dropout_rng, candidate_rng
                    )
                    if not np.isfinite(loss):
                        raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step}")
                    loss_sum += loss * len(positions)
                    scored += n_scored
                seconds = time.perf_counter() - started

                val_metric = EvaluationService.evaluate(model, data, "val", candidate_idx=train_idx,
                                                        batch_size=tc.eval_batch_size)
                delta = None
                if previous_record is not None:
                    record = TrainingService.collect_train_contexts(model, train_features, train_labels)
                    delta = float(delta_context(previous_record, record).mean())
                    previous_record = record

                decision = early_stop_update(tracker, val_metric)
                if decision is StopDecision.NEW_BEST:
                    best_snapshot = model.snapshot()
                log.append(EpochRecord(
                    epoch=epoch,
                    train_loss=loss_sum / n_train,
                    val_metric=val_metric,
                    delta_context_mean=delta,
                    seconds=seconds,
                    candidates_scored=scored / n_train,
                    frozen=cache is not None,
                ))
                logger.info(
                    f"epoch {epoch}: loss {loss_sum / n_train:.5f}, val {val_metric:.5f}"
                    + ("" if delta is None else f", delta-context {delta:.4f}")
                    + f", {seconds:.1f}s" + (" *" if decision is StopDecision.NEW_BEST else "")
                )

                if decision is StopDecision.STOP:
                    log.stopped_early = True
                    break
                if retrieval and cache is None and tc.freeze_after is not None and epoch >= tc.freeze_after:
                    cache = RetrievalService.freeze_contexts(model, train_features, epoch=epoch)
                    log.freeze_epoch = epoch

            model.restore(best_snapshot)
            log.best_epoch = tracker.best_epoch
            log.best_val_metric = tracker.best
            log.context_cache = cache
        logger.info(f"Best epoch {log.best_epoch} with val metric {log.best_val_metric}")
        return model, log

    @staticmethod
    def _step(
        model: TabRModel,
        state: AdamWState,
        positions: np.ndarray,
        train_features: np.ndarray,
        train_labels: np.ndarray,
        cache: ContextCache | None,
        dropout_rng: np.random.Generator,
        candidate_rng: np.random.Generator,
    ) -> tuple[float, int]:
        """One optimization step; returns the batch loss and the number of candidates scored."""
        rows = train_features[positions]
        context_indices = None
        scored = 0
        if model.uses_retrieval:
            if cache is not None:
                context_indices = cache.lookup(positions)
                scored = context_indices.size
            else:
                context_indices, scored = TrainingService._search_batch(
                    model, positions, train_features, candidate_rng
                )

        with ad.Graph() as graph:
            context = None
            if context_indices is not None:
                context = RetrievalService.build_context(
                    model, context_indices, train_features, train_labels, training=True, rng=dropout_rng
                )
            output, _ = ModelService.forward(model, rows, context, training=True, rng=dropout_rng)
            loss = ModelService.loss(model, output, train_labels[positions])
        grads = ad.backward(graph, loss, model.params)
        adamw_step(model.params, grads, state, no_decay=default_no_decay)
        return loss.item(), scored

    @staticmethod
    def _search_batch(
        model: TabRModel, positions: np.ndarray, train_features: np.ndarray, candidate_rng: np.random.Generator
    ) -> tuple[np.ndarray, int]:
        """Encode the candidate pool and select each target's top-m, leaving the target out."""
        n_train = len(train_features)
        cap = model.config.retrieval.candidate_cap
        pool = None
        if cap is not None and cap < n_train:
            sampled = candidate_rng.choice(n_train, size=cap, replace=False)
            pool = np.union1d(sampled, positions)
        pool_features = train_features if pool is None else train_features[pool]

        candidates = RetrievalService.encode_candidates(model, pool_features)
        own = positions if pool is None else np.searchsorted(pool, positions)
        queries = RetrievalService.search_queries(model, candidates.take(own))
        selected = RetrievalService.search(model, queries, candidates, exclude=own)
        indices = selected if pool is None else pool[selected]
        return indices, len(positions) * (len(candidates) - 1)

    @staticmethod
    def collect_train_contexts(model: TabRModel, train_features: np.ndarray, train_labels: np.ndarray) -> ContextRecord:
        """Eval-mode contexts of all training objects, used for context-change tracking."""
        candidates = RetrievalService.encode_candidates(model, train_features)
        return RetrievalService.collect_contexts(model, candidates, train_labels)
