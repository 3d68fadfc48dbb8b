"""
Per-epoch training log.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd

from models.context import ContextCache

CSV_COLUMNS = [
    "epoch",
    "train_loss",
    "val_metric",
    "delta_context_mean",
    "seconds",
    "candidates_scored",
    "frozen",
]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    delta_context_mean: float | None
    seconds: float                  # optimization steps only
    candidates_scored: float        # mean number of candidates scored per training object
    frozen: bool


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_metric: float | None = None
    stopped_early: bool = False
    freeze_epoch: int | None = None
    context_cache: ContextCache | None = None      # frozen candidate indices, saved with the checkpoint

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.epochs))

    def deterministic_view(self) -> list[tuple]:
        """Everything except wall-clock timings."""
        return [
            (r.epoch, r.train_loss, r.val_metric, r.delta_context_mean, r.candidates_scored, r.frozen)
            for r in self.epochs
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.epochs], columns=CSV_COLUMNS)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path
