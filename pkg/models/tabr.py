"""
Trained-model container shared by TabR and the MLP baseline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from models.dataset import FeatureLayout
from models.enums import Task
from services.autodiff import Tensor

if TYPE_CHECKING:
    from config.run_config import ModelConfig


@dataclass
class TabRModel:
    """Architecture config plus every learnable parameter in declaration order."""

    config: ModelConfig
    layout: FeatureLayout
    task: Task
    n_classes: int | None
    params: dict[str, Tensor] = field(default_factory=dict)

    @property
    def output_dim(self) -> int:
        return output_dim(self.task, self.n_classes)

    @property
    def uses_retrieval(self) -> bool:
        return self.config.kind.uses_retrieval

    @property
    def dtype(self) -> np.dtype:
        """Storage precision of the parameters."""
        first = next(iter(self.params.values()), None)
        return np.dtype(np.float64) if first is None else first.data.dtype

    @property
    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def version(self) -> str:
        """Tag identifying the current parameter values."""
        digest = hashlib.sha256()
        for name, param in self.params.items():
            digest.update(name.encode("utf-8"))
            digest.update(str(param.data.dtype).encode("utf-8"))
            digest.update(np.ascontiguousarray(param.data).tobytes())
        return digest.hexdigest()[:16]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: param.data for name, param in self.params.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, param in self.params.items():
            param.data = snapshot[name]


def output_dim(task: Task, n_classes: int | None) -> int:
    """1 for regression and the binary logit, C for multiclass."""
    return n_classes if task is Task.MULTICLASS else 1
