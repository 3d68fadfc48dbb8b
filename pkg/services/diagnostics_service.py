"""
Gradient-check suite: every autodiff primitive in isolation and the full
TabR forward + loss on a small synthetic dataset.
"""

import logging
from typing import Callable

import numpy as np

from config.run_config import ModelConfig, NumEmbeddingConfig, RetrievalConfig
from models.dataset import FeatureLayout
from models.enums import EmbeddingScheme, ModelKind, SimilarityKind, Task, ValueKind
from services import autodiff as ad
from services.autodiff import Tensor
from services.grad_check import grad_check
from services.model_service import ModelService
from services.retrieval import RetrievalService

logger = logging.getLogger(__name__)

GRAD_CHECK_TOLERANCE = 1e-4
SYNTHETIC_ROWS = 32

Case = tuple[Callable[[], Tensor], dict[str, Tensor]]


class _Probe:
    """Fixed random weighting that turns any output into a scalar."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.weights: dict[tuple, np.ndarray] = {}

    def __call__(self, out: Tensor) -> Tensor:
        if out.shape not in self.weights:
            self.weights[out.shape] = self.rng.standard_normal(out.shape)
        return ad.sum(ad.mul(out, Tensor(self.weights[out.shape])))


def _params(rng: np.random.Generator, **shapes) -> dict[str, Tensor]:
    return {name: Tensor(rng.standard_normal(shape), requires_grad=True, name=name) for name, shape in shapes.items()}


def _away_from_zero(rng: np.random.Generator, shape, name: str) -> Tensor:
    values = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(values, requires_grad=True, name=name)


def primitive_cases(seed: int = 0) -> dict[str, Case]:
    """One small scalar-valued function per primitive."""
    rng = np.random.default_rng(seed)
    probe = _Probe(rng)
    cases: dict[str, Case] = {}

    p = _params(rng, x=(4, 3), w=(3, 2))
    cases["matmul"] = (lambda p=p: probe(ad.matmul(p["x"], p["w"])), p)
    p = _params(rng, x=(2, 4, 3), b=(3,))
    cases["bias_add"] = (lambda p=p: probe(ad.apply_primitive("bias_add", [p["x"], p["b"]])), p)
    p = _params(rng, a=(4, 3), b=(3,))
    cases["add"] = (lambda p=p: probe(ad.add(p["a"], p["b"])), p)
    p = _params(rng, a=(4, 1, 3), b=(4, 5, 3))
    cases["sub"] = (lambda p=p: probe(ad.sub(p["a"], p["b"])), p)
    p = _params(rng, a=(4, 3), b=(4, 3))
    cases["mul"] = (lambda p=p: probe(ad.mul(p["a"], p["b"])), p)
    p = _params(rng, x=(3, 3))
    cases["scale"] = (lambda p=p: probe(ad.scale(p["x"], -0.7)), p)
    p = {"x": _away_from_zero(rng, (4, 3), "x")}
    cases["relu"] = (lambda p=p: probe(ad.relu(p["x"])), p)
    p = _params(rng, x=(4, 3))
    cases["cos"] = (lambda p=p: probe(ad.cos(p["x"])), p)
    p = _params(rng, x=(4, 3))
    cases["sin"] = (lambda p=p: probe(ad.sin(p["x"])), p)
    p = _params(rng, x=(2, 3, 5), gain=(5,), bias=(5,))
    cases["layer_norm"] = (lambda p=p: probe(ad.layer_norm(p["x"], p["gain"], p["bias"])), p)
    p = _params(rng, x=(3, 6))
    cases["softmax"] = (lambda p=p: probe(ad.softmax(p["x"])), p)
    p = _params(rng, x=(3, 4))
    cases["dropout"] = (lambda p=p: probe(ad.dropout(p["x"], 0.5, None, training=False)), p)
    p = _params(rng, table=(5, 3))
    indices = np.array([[0, 2, 2], [4, 0, 1]])
    cases["embedding"] = (lambda p=p: probe(ad.embedding(p["table"], indices)), p)
    p = _params(rng, a=(4, 3), b=(6, 3))
    cases["pairwise_sq_l2"] = (lambda p=p: probe(ad.pairwise_sq_l2(p["a"], p["b"])), p)
    p = _params(rng, a=(4, 3), b=(4, 5, 3))
    cases["pairwise_sq_l2_batched"] = (lambda p=p: probe(ad.pairwise_sq_l2(p["a"], p["b"])), p)
    p = _params(rng, x=(3, 4, 2))
    cases["sum"] = (lambda p=p: probe(ad.sum(p["x"], axis=1)), p)
    p = _params(rng, x=(3, 4, 2))
    cases["mean"] = (lambda p=p: probe(ad.mean(p["x"], axis=-1, keepdims=True)), p)
    p = _params(rng, pred=(6,), target=(6,))
    cases["mse_loss"] = (lambda p=p: ad.mse_loss(p["pred"], p["target"]), p)
    p = _params(rng, logits=(5, 4))
    classes = rng.integers(0, 4, 5)
    cases["cross_entropy"] = (lambda p=p: ad.cross_entropy(p["logits"], classes), p)
    p = _params(rng, logits=(6,))
    binary = rng.integers(0, 2, 6).astype(np.float64)
    cases["bce_with_logits"] = (lambda p=p: ad.bce_with_logits(p["logits"], binary), p)
    p = _params(rng, a=(3, 2, 4), b=(3, 1, 4))
    cases["concat"] = (lambda p=p: probe(ad.concat([p["a"], p["b"]], axis=1)), p)
    p = _params(rng, x=(3, 4))
    cases["reshape"] = (lambda p=p: probe(ad.reshape(p["x"], (2, 6))), p)
    p = _params(rng, x=(3, 2, 4), w=(2, 4, 5))
    cases["feature_matmul"] = (lambda p=p: probe(ad.feature_matmul(p["x"], p["w"])), p)
    return cases


def model_variants() -> dict[str, tuple[ModelConfig, Task, int | None]]:
    """Small configurations covering every value kind, both similarity families and the embeddings."""
    no_dropout = {"ffn_dropout": 0.0}
    retrieval = {"m": 4, "attention_dropout": 0.0}
    return {
        "tabr-s/regression": (
            ModelConfig(kind=ModelKind.TABR_S, d=16, retrieval=RetrievalConfig(**retrieval), **no_dropout),
            Task.REGRESSION, None,
        ),
        "tabr-s/multiclass": (
            ModelConfig(kind=ModelKind.TABR_S, d=8, retrieval=RetrievalConfig(**retrieval), **no_dropout),
            Task.MULTICLASS, 3,
        ),
        "step-0/binclass": (
            ModelConfig(
                kind=ModelKind.TABR_S, d=8, **no_dropout,
                retrieval=RetrievalConfig(
                    similarity=SimilarityKind.DOT_QK, value=ValueKind.WV,
                    scale_by_sqrt_d=True, include_self=True, **retrieval,
                ),
            ),
            Task.BINCLASS, 2,
        ),
        "tabr/plr-lite": (
            ModelConfig(
                kind=ModelKind.TABR, d=8, encoder_blocks=1, **no_dropout,
                embedding=NumEmbeddingConfig(scheme=EmbeddingScheme.PLR_LITE, d_embedding=4, n_frequencies=3),
                retrieval=RetrievalConfig(include_self=True, **retrieval),
            ),
            Task.REGRESSION, None,
        ),
        "mlp/plr": (
            ModelConfig(
                kind=ModelKind.MLP, d=8, mlp_layers=2, **no_dropout,
                embedding=NumEmbeddingConfig(scheme=EmbeddingScheme.PLR, d_embedding=3, n_frequencies=2),
            ),
            Task.REGRESSION, None,
        ),
    }


def model_case(config: ModelConfig, task: Task, n_classes: int | None, seed: int = 0,
               n_rows: int = SYNTHETIC_ROWS) -> Case:
    """Forward + loss over synthetic rows; contexts are selected once and then held fixed."""
    rng = np.random.default_rng(seed)
    layout = FeatureLayout(n_num=3, n_bin=1, n_onehot=0)
    features = np.concatenate([rng.standard_normal((n_rows, 3)), rng.integers(0, 2, (n_rows, 1))], axis=1)
    if task is Task.REGRESSION:
        labels = rng.standard_normal(n_rows)
    else:
        labels = rng.integers(0, n_classes, n_rows)

    with ad.precision(np.float64):
        model = ModelService.create_model(config, layout, task, n_classes, seed)
        indices = None
        if model.uses_retrieval:
            indices = RetrievalService.freeze_contexts(model, features).indices

    def loss() -> Tensor:
        context = None
        if indices is not None:
            context = RetrievalService.build_context(model, indices, features, labels, training=True)
        output, _ = ModelService.forward(model, features, context, training=True)
        return ModelService.loss(model, output, labels)

    return loss, model.params


class DiagnosticsService:

    @staticmethod
    def grad_check_suite(seed: int = 0, max_entries: int | None = 64) -> dict[str, float]:
        """Max relative gradient error per primitive and per model variant."""
        errors = {}
        for name, (f, params) in primitive_cases(seed).items():
            errors[f"primitive/{name}"] = grad_check(f, params)
        for name, (config, task, n_classes) in model_variants().items():
            f, params = model_case(config, task, n_classes, seed)
            errors[f"model/{name}"] = grad_check(f, params, max_entries=max_entries, seed=seed)
        worst = max(errors, key=errors.get)
        logger.info(f"grad-check suite: {len(errors)} checks, worst {worst} ({errors[worst]:.3e})")
        return errors
