"""
Input module, encoder and predictor blocks, prediction head and the MLP baseline.

Parameters live in a flat ``dict[str, Tensor]``; every function here reads the
entries under its own prefix.
"""

import math

import numpy as np

from config.run_config import ModelConfig
from models.dataset import FeatureLayout
from services import autodiff as ad
from services.autodiff import Tensor
from services.embeddings import NumEmbeddingService
from services.errors import ConfigError


def parameter(name: str, array: np.ndarray) -> Tensor:
    return Tensor(array.astype(ad.default_dtype()), requires_grad=True, name=name)


class BackboneService:

    @staticmethod
    def init_linear(
        prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True
    ) -> dict[str, Tensor]:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias."""
        bound = 1.0 / math.sqrt(fan_in)
        params = {f"{prefix}.weight": parameter(f"{prefix}.weight", rng.uniform(-bound, bound, (fan_in, fan_out)))}
        if bias:
            params[f"{prefix}.bias"] = parameter(f"{prefix}.bias", rng.uniform(-bound, bound, (fan_out,)))
        return params

    @staticmethod
    def init_norm(prefix: str, width: int) -> dict[str, Tensor]:
        return {
            f"{prefix}.weight": parameter(f"{prefix}.weight", np.ones(width)),
            f"{prefix}.bias": parameter(f"{prefix}.bias", np.zeros(width)),
        }

    @staticmethod
    def init_block(prefix: str, d: int, rng: np.random.Generator, norm: bool = True) -> dict[str, Tensor]:
        params = BackboneService.init_norm(f"{prefix}.norm", d) if norm else {}
        params.update(BackboneService.init_linear(f"{prefix}.linear1", d, 2 * d, rng))
        params.update(BackboneService.init_linear(f"{prefix}.linear2", 2 * d, d, rng))
        return params

    @staticmethod
    def input_width(cfg: ModelConfig, layout: FeatureLayout) -> int:
        return NumEmbeddingService.output_width(cfg.embedding, layout.n_num) + layout.n_bin + layout.n_onehot

    @staticmethod
    def init_input(cfg: ModelConfig, layout: FeatureLayout, rng: np.random.Generator) -> dict[str, Tensor]:
        params = NumEmbeddingService.init_params(cfg.embedding, layout.n_num, rng)
        params.update(BackboneService.init_linear("input", BackboneService.input_width(cfg, layout), cfg.d, rng))
        return params

    @staticmethod
    def init_encoder(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i in range(cfg.encoder_blocks):
            params.update(BackboneService.init_block(f"encoder.{i}", cfg.d, rng, norm=i > 0))
        return params

    @staticmethod
    def init_predictor(cfg: ModelConfig, output_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i in range(cfg.predictor_blocks):
            params.update(BackboneService.init_block(f"predictor.{i}", cfg.d, rng))
        params.update(BackboneService.init_norm("head.norm", cfg.d))
        params.update(BackboneService.init_linear("head.linear", cfg.d, output_dim, rng))
        return params

    @staticmethod
    def init_mlp(cfg: ModelConfig, layout: FeatureLayout, output_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
        params = NumEmbeddingService.init_params(cfg.embedding, layout.n_num, rng)
        width = BackboneService.input_width(cfg, layout)
        for i in range(cfg.mlp_layers):
            params.update(BackboneService.init_linear(f"mlp.{i}", width, cfg.d, rng))
            width = cfg.d
        params.update(BackboneService.init_linear("mlp.head", width, output_dim, rng))
        return params

    # ------------------------------------------------------------------
    # forward

    @staticmethod
    def assemble_input(features: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig, layout: FeatureLayout) -> Tensor:
        """[embedded-or-raw numeric | binary | one-hot] for preprocessed rows."""
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[1] != layout.width:
            raise ConfigError(f"expected preprocessed rows of width {layout.width}, got shape {features.shape}")
        numeric = NumEmbeddingService.embed_numeric(Tensor(features[:, :layout.n_num]), params, cfg.embedding)
        if layout.width == layout.n_num:
            return numeric
        rest = Tensor(features[:, layout.n_num:])
        return ad.concat([numeric, rest], axis=1)

    @staticmethod
    def input_module(features: np.ndarray, params: dict[str, Tensor], cfg: ModelConfig, layout: FeatureLayout) -> Tensor:
        x = BackboneService.assemble_input(features, params, cfg, layout)
        return ad.linear(x, params["input.weight"], params["input.bias"])

    @staticmethod
    def block_forward(
        x: Tensor,
        params: dict[str, Tensor],
        prefix: str,
        dropout: float,
        training: bool,
        rng: np.random.Generator | None,
    ) -> Tensor:
        """x + Linear2(Dropout(ReLU(Linear1(LN(x))))); LN only when the block has one."""
        h = x
        if f"{prefix}.norm.weight" in params:
            h = ad.layer_norm(h, params[f"{prefix}.norm.weight"], params[f"{prefix}.norm.bias"])
        h = ad.linear(h, params[f"{prefix}.linear1.weight"], params[f"{prefix}.linear1.bias"])
        h = ad.dropout(ad.relu(h), dropout, rng, training)
        h = ad.linear(h, params[f"{prefix}.linear2.weight"], params[f"{prefix}.linear2.bias"])
        return ad.add(x, h)

    @staticmethod
    def encoder_forward(
        v: Tensor, params: dict[str, Tensor], cfg: ModelConfig, training: bool, rng: np.random.Generator | None = None
    ) -> Tensor:
        for i in range(cfg.encoder_blocks):
            v = BackboneService.block_forward(v, params, f"encoder.{i}", cfg.ffn_dropout, training, rng)
        return v

    @staticmethod
    def head_forward(h: Tensor, params: dict[str, Tensor]) -> Tensor:
        h = ad.relu(ad.layer_norm(h, params["head.norm.weight"], params["head.norm.bias"]))
        return ad.linear(h, params["head.linear.weight"], params["head.linear.bias"])

    @staticmethod
    def predictor_forward(
        h: Tensor, params: dict[str, Tensor], cfg: ModelConfig, training: bool, rng: np.random.Generator | None = None
    ) -> Tensor:
        for i in range(cfg.predictor_blocks):
            h = BackboneService.block_forward(h, params, f"predictor.{i}", cfg.ffn_dropout, training, rng)
        return BackboneService.head_forward(h, params)

    @staticmethod
    def mlp_forward(
        features: np.ndarray,
        params: dict[str, Tensor],
        cfg: ModelConfig,
        layout: FeatureLayout,
        training: bool,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """[Linear -> ReLU -> Dropout] x L -> Linear head."""
        x = BackboneService.assemble_input(features, params, cfg, layout)
        for i in range(cfg.mlp_layers):
            x = ad.relu(ad.linear(x, params[f"mlp.{i}.weight"], params[f"mlp.{i}.bias"]))
            x = ad.dropout(x, cfg.ffn_dropout, rng, training)
        return ad.linear(x, params["mlp.head.weight"], params["mlp.head.bias"])
