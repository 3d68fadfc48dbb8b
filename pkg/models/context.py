"""
Context records produced by the retrieval module and the frozen-context cache.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ContextRecord:
    """
    Which candidates each object attended to and with what softmax weight.

    ``indices`` and ``weights`` are (n_objects, m); ``self_weights`` holds the
    weight on the object itself when it is part of its own context.
    """

    indices: np.ndarray
    weights: np.ndarray
    self_weights: np.ndarray | None = None

    @property
    def n_objects(self) -> int:
        return int(self.indices.shape[0])

    @property
    def m(self) -> int:
        return int(self.indices.shape[1])

    @staticmethod
    def concatenate(records: list["ContextRecord"]) -> "ContextRecord":
        self_weights = None
        if records and records[0].self_weights is not None:
            self_weights = np.concatenate([r.self_weights for r in records])
        return ContextRecord(
            indices=np.concatenate([r.indices for r in records]),
            weights=np.concatenate([r.weights for r in records]),
            self_weights=self_weights,
        )


@dataclass(frozen=True)
class ContextCache:
    """Frozen top-m candidate positions for every training object (row i = training position i)."""

    indices: np.ndarray
    frozen_at_epoch: int

    def __post_init__(self):
        self.indices.flags.writeable = False

    @property
    def m(self) -> int:
        return int(self.indices.shape[1])

    def lookup(self, positions: np.ndarray) -> np.ndarray:
        return self.indices[positions]
