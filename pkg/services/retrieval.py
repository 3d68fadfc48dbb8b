"""
Retrieval module: candidate encoding, similarity, top-m context selection,
value computation and the attention-weighted residual.

Search over candidates runs without gradients; the selected context rows are
then encoded inside the active graph so gradients reach the encoder and key
projection through them.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config.run_config import ModelConfig
from models.candidate_store import EncodedCandidates
from models.context import ContextCache, ContextRecord
from models.enums import SimilarityKind, Task, ValueKind
from models.tabr import TabRModel
from services import autodiff as ad
from services.autodiff import Tensor
from services.backbone import BackboneService, parameter
from services.errors import ConfigError

logger = logging.getLogger(__name__)

ENCODE_CHUNK = 4096


@dataclass
class EncodedBatch:
    """Encoder output for a batch of rows, inside or outside a graph."""

    x_tilde: Tensor
    representations: Tensor
    keys: Tensor


@dataclass
class ContextBatch:
    """Selected context of every object in a batch."""

    indices: np.ndarray         # (B, m) candidate positions
    representations: Tensor     # (U, d) unique selected rows
    keys: Tensor                # (U, d)
    local: np.ndarray           # (B, m) rows of representations/keys
    labels: np.ndarray          # (B, m) training-space labels


class RetrievalService:

    @staticmethod
    def init_params(cfg: ModelConfig, task: Task, n_classes: int | None, rng: np.random.Generator) -> dict[str, Tensor]:
        d = cfg.d
        retrieval = cfg.retrieval
        params: dict[str, Tensor] = {}
        if cfg.encoder_blocks > 0:
            params.update(BackboneService.init_norm("retrieval.norm", d))
        if retrieval.similarity.uses_query:
            params.update(BackboneService.init_linear("retrieval.query", d, d, rng))
        params.update(BackboneService.init_linear("retrieval.key", d, d, rng))
        if retrieval.value.uses_value_projection:
            params.update(BackboneService.init_linear("retrieval.value", d, d, rng))
        if retrieval.value.uses_labels:
            bound = 1.0 / math.sqrt(d)
            if task.is_classification:
                params["retrieval.label.weight"] = parameter("retrieval.label.weight", rng.uniform(-bound, bound, (n_classes, d)))
            else:
                params["retrieval.label.weight"] = parameter("retrieval.label.weight", rng.uniform(-bound, bound, (1, d)))
                params["retrieval.label.bias"] = parameter("retrieval.label.bias", rng.uniform(-bound, bound, (d,)))
        if retrieval.value is ValueKind.WY_T:
            params.update(BackboneService.init_linear("retrieval.t.linear1", d, 2 * d, rng))
            params.update(BackboneService.init_linear("retrieval.t.linear2", 2 * d, d, rng, bias=False))
        return params

    # ------------------------------------------------------------------
    # encoding

    @staticmethod
    def encode(
        model: TabRModel, features: np.ndarray, training: bool = False, rng: np.random.Generator | None = None
    ) -> EncodedBatch:
        """x̃ = E(input(x)); the shared normalization (N_E > 0) feeds W_K and the values."""
        params, cfg = model.params, model.config
        v = BackboneService.input_module(features, params, cfg, model.layout)
        x_tilde = BackboneService.encoder_forward(v, params, cfg, training, rng)
        representations = x_tilde
        if "retrieval.norm.weight" in params:
            representations = ad.layer_norm(x_tilde, params["retrieval.norm.weight"], params["retrieval.norm.bias"])
        keys = ad.linear(representations, params["retrieval.key.weight"], params["retrieval.key.bias"])
        return EncodedBatch(x_tilde, representations, keys)

    @staticmethod
    def encode_candidates(model: TabRModel, features: np.ndarray, chunk_size: int = ENCODE_CHUNK) -> EncodedCandidates:
        """Eval-mode, gradient-free encoding of candidate rows."""
        if len(features) == 0:
            raise ConfigError("empty candidate set")
        representations, keys = [], []
        with ad.no_grad():
            for start in range(0, len(features), chunk_size):
                encoded = RetrievalService.encode(model, features[start:start + chunk_size])
                representations.append(encoded.representations.data)
                keys.append(encoded.keys.data)
        return EncodedCandidates(np.concatenate(representations), np.concatenate(keys))

    @staticmethod
    def query_vectors(model: TabRModel, representations, keys):
        """q = W_Q(x̃) for the query-projection kinds, otherwise the key itself."""
        if not model.config.retrieval.similarity.uses_query:
            return keys
        params = model.params
        return ad.linear(representations, params["retrieval.query.weight"], params["retrieval.query.bias"])

    # ------------------------------------------------------------------
    # similarity and selection

    @staticmethod
    def similarity(kind: SimilarityKind, query: np.ndarray, key: np.ndarray, scale_by_sqrt_d: bool = False) -> float:
        """Score of one candidate key against a query (q for *QK kinds, k otherwise)."""
        query, key = np.asarray(query, dtype=np.float64), np.asarray(key, dtype=np.float64)
        if query.shape != key.shape or query.ndim != 1:
            raise ConfigError(f"similarity needs two vectors of equal length, got {query.shape} and {key.shape}")
        diff = query - key
        score = -float(diff @ diff) if kind.is_l2 else float(query @ key)
        return score / math.sqrt(len(query)) if scale_by_sqrt_d else score

    @staticmethod
    def score_matrix(model: TabRModel, queries: np.ndarray, keys: np.ndarray) -> np.ndarray:
        """(B, N) scores of every query against every candidate key."""
        retrieval = model.config.retrieval
        with ad.no_grad():
            if retrieval.similarity.is_l2:
                scores = -ad.pairwise_sq_l2(Tensor.wrap(queries), Tensor.wrap(keys)).data
            else:
                scores = ad.matmul(Tensor.wrap(queries), Tensor.wrap(np.ascontiguousarray(keys.T))).data
        if retrieval.scale_by_sqrt_d:
            scores = scores / math.sqrt(model.config.d)
        return scores

    @staticmethod
    def select_top_m(scores: np.ndarray, m: int, exclude: np.ndarray | None = None) -> np.ndarray:
        """
        Positions of the m largest scores per row, best first; ties go to the
        lower position. ``exclude`` removes one position per row from candidacy.
        """
        scores = np.asarray(scores)
        if scores.ndim != 2:
            raise ConfigError(f"scores must be 2-D, got {scores.shape}")
        n_rows, n_candidates = scores.shape
        negated = -scores.astype(np.float64)
        available = n_candidates
        if exclude is not None:
            negated[np.arange(n_rows), np.asarray(exclude)] = np.inf
            available -= 1
        if available < 1:
            raise ConfigError("no candidates left after removing the target itself")
        if m > available:
            logger.warning(f"only {available} candidates for context size {m}; using all of them")
            m = available

        kth = np.partition(negated, m - 1, axis=1)[:, m - 1:m]
        eligible = negated <= kth
        selected = np.empty((n_rows, m), dtype=np.int64)
        for row in range(n_rows):
            positions = np.flatnonzero(eligible[row])
            order = np.argsort(negated[row, positions], kind="stable")[:m]
            selected[row] = positions[order]
        return selected

    @staticmethod
    def select_context(
        scores: np.ndarray,
        m: int,
        include_self: bool = False,
        self_index: int | None = None,
        self_score: float | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Top-m for a single object. The object's own index is never one of the m;
        with include_self it is appended as an extra entry.
        """
        scores = np.asarray(scores, dtype=np.float64)
        exclude = None if self_index is None else np.array([self_index])
        indices = RetrievalService.select_top_m(scores[None, :], m, exclude)[0]
        selected = scores[indices]
        if include_self and self_index is not None:
            own = scores[self_index] if self_score is None else self_score
            indices = np.append(indices, self_index)
            selected = np.append(selected, own)
        return indices, selected

    @staticmethod
    def search(
        model: TabRModel,
        queries: np.ndarray,
        candidates: EncodedCandidates,
        exclude: np.ndarray | None = None,
        chunk_size: int = 512,
    ) -> np.ndarray:
        """Full scan of the candidates for each query; returns (B, m) positions."""
        m = model.config.retrieval.m
        selected = []
        for start in range(0, len(queries), chunk_size):
            stop = start + chunk_size
            scores = RetrievalService.score_matrix(model, queries[start:stop], candidates.keys)
            selected.append(RetrievalService.select_top_m(
                scores, m, None if exclude is None else exclude[start:stop]
            ))
        return np.concatenate(selected)

    @staticmethod
    def search_queries(model: TabRModel, encoded: EncodedCandidates) -> np.ndarray:
        with ad.no_grad():
            queries = RetrievalService.query_vectors(
                model, Tensor.wrap(encoded.representations), Tensor.wrap(encoded.keys)
            )
        return queries.data

    # ------------------------------------------------------------------
    # context assembly and forward

    @staticmethod
    def build_context(
        model: TabRModel,
        indices: np.ndarray,
        candidate_features: np.ndarray,
        candidate_labels: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
        encoded: EncodedCandidates | None = None,
    ) -> ContextBatch:
        """
        Gather the selected candidates. Without ``encoded`` the unique rows are
        re-encoded with the current parameters (inside the active graph).
        """
        unique = np.unique(indices)
        local = np.searchsorted(unique, indices)
        if encoded is None:
            batch = RetrievalService.encode(model, candidate_features[unique], training, rng)
            representations, keys = batch.representations, batch.keys
        else:
            representations = Tensor.wrap(encoded.representations[unique])
            keys = Tensor.wrap(encoded.keys[unique])
        return ContextBatch(indices, representations, keys, local, np.asarray(candidate_labels)[indices])

    @staticmethod
    def label_embedding(model: TabRModel, labels: np.ndarray) -> Tensor:
        """W_Y(y): a table row for classes, a linear map for standardized regression targets."""
        params = model.params
        if model.task.is_classification:
            return ad.embedding(params["retrieval.label.weight"], labels.astype(np.int64))
        n_rows, m = labels.shape
        scaled = ad.mul(Tensor(labels.reshape(n_rows, m, 1)), params["retrieval.label.weight"])
        return ad.add(scaled, params["retrieval.label.bias"])

    @staticmethod
    def t_forward(model: TabRModel, diff: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        params, cfg = model.params, model.config
        hidden = ad.relu(ad.linear(diff, params["retrieval.t.linear1.weight"], params["retrieval.t.linear1.bias"]))
        hidden = ad.dropout(hidden, cfg.ffn_dropout, rng, training)
        return ad.linear(hidden, params["retrieval.t.linear2.weight"])

    @staticmethod
    def value(
        model: TabRModel,
        target_keys: Tensor,
        context_keys: Tensor,
        context_representations: Tensor | None,
        labels: np.ndarray,
        include_self: bool = False,
        training: bool = False,
        rng: np.random.Generator | None = None,
        projection: np.ndarray | None = None,
    ) -> Tensor:
        """
        Values of the context entries, (B, m', d).

        ``context_keys``/``context_representations`` already contain the self
        entry when ``include_self``; ``labels`` covers only the m real entries
        and the self entry gets no label term. ``projection`` is a unit vector
        whose component is removed from T's output.
        """
        params = model.params
        kind = model.config.retrieval.value
        n_rows, width, d = context_keys.shape

        label_part = None
        if kind.uses_labels:
            label_part = RetrievalService.label_embedding(model, labels)
            if include_self:
                label_part = ad.concat([label_part, Tensor(np.zeros((n_rows, 1, d)))], axis=1)

        if kind is ValueKind.WY_T:
            diff = ad.sub(ad.reshape(target_keys, (n_rows, 1, d)), context_keys)
            correction = RetrievalService.t_forward(model, diff, training, rng)
            if projection is not None:
                direction = Tensor(projection)
                component = ad.sum(ad.mul(correction, direction), axis=-1, keepdims=True)
                correction = ad.sub(correction, ad.mul(component, direction))
            return ad.add(label_part, correction)

        projected = ad.linear(context_representations, params["retrieval.value.weight"], params["retrieval.value.bias"])
        return projected if label_part is None else ad.add(label_part, projected)

    @staticmethod
    def gather(model: TabRModel, target: EncodedBatch, context: ContextBatch) -> tuple[Tensor, Tensor | None]:
        """Context keys and representations, (B, m', d), with the target appended when include_self."""
        retrieval = model.config.retrieval
        n_rows, _ = context.local.shape
        d = model.config.d
        context_keys = ad.embedding(context.keys, context.local)
        context_representations = None
        if retrieval.value.uses_value_projection:
            context_representations = ad.embedding(context.representations, context.local)
        if retrieval.include_self:
            context_keys = ad.concat([context_keys, ad.reshape(target.keys, (n_rows, 1, d))], axis=1)
            if context_representations is not None:
                context_representations = ad.concat(
                    [context_representations, ad.reshape(target.representations, (n_rows, 1, d))], axis=1
                )
        return context_keys, context_representations

    @staticmethod
    def context_scores(model: TabRModel, target: EncodedBatch, context_keys: Tensor) -> Tensor:
        retrieval = model.config.retrieval
        n_rows, _, d = context_keys.shape
        queries = RetrievalService.query_vectors(model, target.representations, target.keys)
        if retrieval.similarity.is_l2:
            scores = ad.scale(ad.pairwise_sq_l2(queries, context_keys), -1.0)
        else:
            scores = ad.sum(ad.mul(ad.reshape(queries, (n_rows, 1, d)), context_keys), axis=-1)
        if retrieval.scale_by_sqrt_d:
            scores = ad.scale(scores, 1.0 / math.sqrt(d))
        return scores

    @staticmethod
    def _record(model: TabRModel, context: ContextBatch, weights: Tensor) -> ContextRecord:
        m = context.local.shape[1]
        return ContextRecord(
            indices=context.indices,
            weights=np.array(weights.data[:, :m]),
            self_weights=np.array(weights.data[:, m]) if model.config.retrieval.include_self else None,
        )

    @staticmethod
    def retrieval_forward(
        model: TabRModel,
        target: EncodedBatch,
        context: ContextBatch,
        training: bool = False,
        rng: np.random.Generator | None = None,
        projection: np.ndarray | None = None,
    ) -> tuple[Tensor, ContextRecord]:
        """Residual r = sum_i w_i V_i and the (indices, weights) record of the context."""
        retrieval = model.config.retrieval
        context_keys, context_representations = RetrievalService.gather(model, target, context)
        weights = ad.softmax(RetrievalService.context_scores(model, target, context_keys))
        values = RetrievalService.value(
            model,
            target.keys,
            context_keys,
            context_representations,
            context.labels,
            include_self=retrieval.include_self,
            training=training,
            rng=rng,
            projection=projection,
        )
        n_rows, width = weights.shape
        dropped = ad.dropout(weights, retrieval.attention_dropout, rng, training)
        residual = ad.sum(ad.mul(ad.reshape(dropped, (n_rows, width, 1)), values), axis=1)
        return residual, RetrievalService._record(model, context, weights)

    @staticmethod
    def collect_contexts(
        model: TabRModel,
        candidates: EncodedCandidates,
        candidate_labels: np.ndarray,
        chunk_size: int = 512,
    ) -> ContextRecord:
        """Eval-mode contexts and softmax weights of every candidate against the others."""
        queries = RetrievalService.search_queries(model, candidates)
        records = []
        with ad.no_grad():
            for start in range(0, len(candidates), chunk_size):
                positions = np.arange(start, min(start + chunk_size, len(candidates)))
                indices = RetrievalService.search(model, queries[positions], candidates, exclude=positions)
                own = candidates.take(positions)
                target = EncodedBatch(
                    Tensor.wrap(own.representations), Tensor.wrap(own.representations), Tensor.wrap(own.keys)
                )
                context = RetrievalService.build_context(model, indices, None, candidate_labels, encoded=candidates)
                context_keys, _ = RetrievalService.gather(model, target, context)
                weights = ad.softmax(RetrievalService.context_scores(model, target, context_keys))
                records.append(RetrievalService._record(model, context, weights))
        return ContextRecord.concatenate(records)

    @staticmethod
    def freeze_contexts(
        model: TabRModel, train_features: np.ndarray, epoch: int = 0, chunk_size: int = 512
    ) -> ContextCache:
        """Top-m candidate positions of every training object under the current parameters."""
        encoded = RetrievalService.encode_candidates(model, train_features)
        queries = RetrievalService.search_queries(model, encoded)
        positions = np.arange(len(encoded))
        indices = RetrievalService.search(model, queries, encoded, exclude=positions, chunk_size=chunk_size)
        logger.info(f"context freeze at epoch {epoch}: {indices.shape[0]} objects x {indices.shape[1]} candidates")
        return ContextCache(indices=indices, frozen_at_epoch=epoch)
