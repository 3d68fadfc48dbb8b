"""
Model assembly, losses and batched inference for TabR and the MLP baseline.
"""

import logging

import numpy as np

from config.run_config import ModelConfig
from models.candidate_store import EncodedCandidates
from models.context import ContextRecord
from models.dataset import FeatureLayout
from models.enums import ModelKind, Task
from models.tabr import TabRModel, output_dim
from services import autodiff as ad
from services.autodiff import Tensor
from services.backbone import BackboneService
from services.errors import ConfigError
from services.retrieval import ContextBatch, RetrievalService
from services.seeding import stream

logger = logging.getLogger(__name__)


class ModelService:

    @staticmethod
    def create_model(
        config: ModelConfig, layout: FeatureLayout, task: Task, n_classes: int | None, seed: int
    ) -> TabRModel:
        """
        Initialize all parameters from the seed's init stream, in declaration
        order: input, encoder, retrieval, predictor, head (or the MLP stack).
        """
        if config.kind is ModelKind.KNN:
            raise ConfigError("kNN has no trainable parameters; use the knn command")
        if task.is_classification and not n_classes:
            raise ConfigError("classification task without n_classes")
        rng = stream(seed, "init")
        out = output_dim(task, n_classes)

        if config.kind.uses_retrieval:
            params = BackboneService.init_input(config, layout, rng)
            params.update(BackboneService.init_encoder(config, rng))
            params.update(RetrievalService.init_params(config, task, n_classes, rng))
            params.update(BackboneService.init_predictor(config, out, rng))
        else:
            params = BackboneService.init_mlp(config, layout, out, rng)

        model = TabRModel(config=config, layout=layout, task=task, n_classes=n_classes, params=params)
        logger.info(f"Created {config.kind.value} model with {model.n_parameters} parameters")
        return model

    @staticmethod
    def forward(
        model: TabRModel,
        features: np.ndarray,
        context: ContextBatch | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        projection: np.ndarray | None = None,
    ) -> tuple[Tensor, ContextRecord | None]:
        """Raw outputs (B, output_dim) for rows whose context has already been selected."""
        cfg = model.config
        if not model.uses_retrieval:
            return BackboneService.mlp_forward(features, model.params, cfg, model.layout, training, rng), None
        if context is None:
            raise ConfigError("a retrieval model needs a context for every row")
        target = RetrievalService.encode(model, features, training, rng)
        residual, record = RetrievalService.retrieval_forward(model, target, context, training, rng, projection)
        output = BackboneService.predictor_forward(ad.add(target.x_tilde, residual), model.params, cfg, training, rng)
        return output, record

    @staticmethod
    def loss(model: TabRModel, output: Tensor, labels: np.ndarray) -> Tensor:
        """MSE for regression, BCE on the single logit for binclass, cross-entropy otherwise."""
        if model.task is Task.MULTICLASS:
            return ad.cross_entropy(output, labels)
        flat = ad.reshape(output, (output.shape[0],))
        if model.task is Task.BINCLASS:
            return ad.bce_with_logits(flat, labels)
        return ad.mse_loss(flat, Tensor(labels))

    @staticmethod
    def predict(
        model: TabRModel,
        features: np.ndarray,
        candidates: EncodedCandidates | None = None,
        candidate_labels: np.ndarray | None = None,
        batch_size: int = 512,
        exclude: np.ndarray | None = None,
        projection: np.ndarray | None = None,
    ) -> tuple[np.ndarray, ContextRecord | None]:
        """
        Eval-mode raw outputs for ``features``, retrieving over ``candidates``.

        Args:
            exclude: Candidate position of each row to leave out of its own
                context (for rows that are themselves candidates).

        Returns:
            (outputs of shape (n, output_dim), context record or None for the MLP)
        """
        if model.uses_retrieval and (candidates is None or candidate_labels is None):
            raise ConfigError("a retrieval model needs candidates and their labels to predict")
        outputs, records = [], []
        with ad.precision(model.dtype), ad.no_grad():
            for start in range(0, len(features), batch_size):
                rows = features[start:start + batch_size]
                if not model.uses_retrieval:
                    output, _ = ModelService.forward(model, rows)
                    outputs.append(output.data)
                    continue
                target = RetrievalService.encode(model, rows)
                queries = RetrievalService.query_vectors(model, target.representations, target.keys).data
                own = None if exclude is None else exclude[start:start + batch_size]
                indices = RetrievalService.search(model, queries, candidates, exclude=own)
                context = RetrievalService.build_context(model, indices, None, candidate_labels, encoded=candidates)
                residual, record = RetrievalService.retrieval_forward(model, target, context, projection=projection)
                output = BackboneService.predictor_forward(
                    ad.add(target.x_tilde, residual), model.params, model.config, training=False
                )
                outputs.append(output.data)
                records.append(record)
        if not outputs:
            return np.zeros((0, model.output_dim)), None
        record = ContextRecord.concatenate(records) if records else None
        return np.concatenate(outputs), record
