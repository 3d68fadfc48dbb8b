"""
Per-seed results of one algorithm on one dataset.
"""

import numpy as np
from pydantic import BaseModel, Field


class RunResult(BaseModel):
    algorithm: str
    dataset: str
    values: list[float] = Field(min_length=1)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        """Sample standard deviation over seeds (n - 1 in the denominator); 0 for a single seed."""
        if len(self.values) < 2:
            return 0.0
        return float(np.std(self.values, ddof=1))

    def as_row(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "dataset": self.dataset,
            "mean": self.mean,
            "std": self.std,
            "values": ";".join(repr(float(v)) for v in self.values),
        }
