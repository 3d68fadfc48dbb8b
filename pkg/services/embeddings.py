"""
Embeddings for numeric features: LR, PLR and PLR-lite.
"""

import math

import numpy as np

from config.run_config import NumEmbeddingConfig
from models.enums import EmbeddingScheme
from services import autodiff as ad
from services.autodiff import Tensor


class NumEmbeddingService:

    @staticmethod
    def output_width(cfg: NumEmbeddingConfig, n_num: int) -> int:
        if cfg.scheme is EmbeddingScheme.NONE:
            return n_num
        return n_num * cfg.d_embedding

    @staticmethod
    def init_params(cfg: NumEmbeddingConfig, n_num: int, rng: np.random.Generator) -> dict[str, Tensor]:
        """Parameters named ``num_emb.*``; empty for scheme none or no numeric columns."""
        if cfg.scheme is EmbeddingScheme.NONE or n_num == 0:
            return {}
        d = cfg.d_embedding
        dtype = ad.default_dtype()
        arrays: dict[str, np.ndarray] = {}

        if cfg.scheme is EmbeddingScheme.LR:
            # per-feature Linear(1 -> d): fan-in 1
            arrays["num_emb.weight"] = rng.uniform(-1.0, 1.0, (n_num, d))
            arrays["num_emb.bias"] = rng.uniform(-1.0, 1.0, (n_num, d))
        else:
            k = cfg.n_frequencies
            bound = 1.0 / math.sqrt(2 * k)
            arrays["num_emb.frequencies"] = rng.normal(0.0, cfg.frequency_scale, (n_num, k))
            if cfg.scheme is EmbeddingScheme.PLR:
                arrays["num_emb.linear.weight"] = rng.uniform(-bound, bound, (n_num, 2 * k, d))
                arrays["num_emb.linear.bias"] = rng.uniform(-bound, bound, (n_num, d))
            else:
                arrays["num_emb.linear.weight"] = rng.uniform(-bound, bound, (2 * k, d))
                arrays["num_emb.linear.bias"] = rng.uniform(-bound, bound, (d,))

        return {
            name: Tensor(array.astype(dtype), requires_grad=True, name=name)
            for name, array in arrays.items()
        }

    @staticmethod
    def periodic(x_num: Tensor, frequencies: Tensor) -> Tensor:
        """[cos(2*pi*c_j*x_j), sin(2*pi*c_j*x_j)] per feature: (n, p) -> (n, p, 2k)."""
        n, p = x_num.shape
        angles = ad.scale(ad.mul(ad.reshape(x_num, (n, p, 1)), frequencies), 2.0 * math.pi)
        return ad.concat([ad.cos(angles), ad.sin(angles)], axis=-1)

    @staticmethod
    def embed_numeric(x_num: Tensor, params: dict[str, Tensor], cfg: NumEmbeddingConfig) -> Tensor:
        """
        Embed an (n, p) numeric block into (n, p * d_embedding).
        With scheme none the input is returned unchanged.
        """
        if cfg.scheme is EmbeddingScheme.NONE or x_num.shape[1] == 0:
            return x_num
        n, p = x_num.shape

        if cfg.scheme is EmbeddingScheme.LR:
            hidden = ad.mul(ad.reshape(x_num, (n, p, 1)), params["num_emb.weight"])
            hidden = ad.add(hidden, params["num_emb.bias"])
        else:
            periodic = NumEmbeddingService.periodic(x_num, params["num_emb.frequencies"])
            if cfg.scheme is EmbeddingScheme.PLR:
                hidden = ad.feature_matmul(periodic, params["num_emb.linear.weight"])
                hidden = ad.add(hidden, params["num_emb.linear.bias"])
            else:
                hidden = ad.linear(periodic, params["num_emb.linear.weight"], params["num_emb.linear.bias"])

        return ad.reshape(ad.relu(hidden), (n, p * cfg.d_embedding))
