"""
Candidate store: rows, labels and their precomputed encodings.
"""

from dataclasses import dataclass

import numpy as np

from services.errors import ConfigError


@dataclass(frozen=True)
class EncodedCandidates:
    """
    Encodings of candidate rows under fixed parameters.

    ``representations`` are the retrieval-module inputs (x̃ after the shared
    normalization when the encoder has blocks); ``keys`` are W_K of those.
    """

    representations: np.ndarray
    keys: np.ndarray

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def take(self, positions: np.ndarray) -> "EncodedCandidates":
        return EncodedCandidates(self.representations[positions], self.keys[positions])


@dataclass(frozen=True)
class CandidateStore:
    """Preprocessed candidate rows with training-space labels and encodings tagged by model version."""

    features: np.ndarray
    labels: np.ndarray
    encoded: EncodedCandidates
    version: str

    def __post_init__(self):
        sizes = {len(self.features), len(self.labels), len(self.encoded)}
        if len(sizes) != 1:
            raise ConfigError(f"candidate store sizes disagree: {sorted(sizes)}")

    @property
    def size(self) -> int:
        return int(len(self.labels))
