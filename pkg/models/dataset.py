"""
Dataset containers: the raw loaded dataset and its preprocessed form.
"""

from dataclasses import dataclass, field

import numpy as np

from .enums import Direction, Task

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Dataset:
    """Raw features, labels and the train/val/test partition of one dataset."""

    X_num: np.ndarray
    X_bin: np.ndarray
    X_cat: np.ndarray
    cat_cardinalities: tuple[int, ...]
    Y: np.ndarray
    task: Task
    n_classes: int | None
    splits: dict[str, np.ndarray]
    name: str = ""

    @property
    def n(self) -> int:
        return int(self.Y.shape[0])

    @property
    def n_num(self) -> int:
        return int(self.X_num.shape[1])

    @property
    def n_bin(self) -> int:
        return int(self.X_bin.shape[1])

    @property
    def n_cat(self) -> int:
        return int(self.X_cat.shape[1])

    @property
    def direction(self) -> Direction:
        return metric_direction(self.task)

    def rows(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.X_num[indices], self.X_bin[indices], self.X_cat[indices]


@dataclass(frozen=True)
class FeatureLayout:
    """Column layout of a preprocessed feature matrix: numeric, binary, one-hot."""

    n_num: int
    n_bin: int
    n_onehot: int

    @property
    def width(self) -> int:
        return self.n_num + self.n_bin + self.n_onehot


@dataclass
class PreparedData:
    """A dataset after the fitted preprocessor has been applied to every row."""

    features: np.ndarray
    labels: np.ndarray          # training space: normalized targets or class indices
    targets: np.ndarray         # original label space
    layout: FeatureLayout
    task: Task
    n_classes: int | None
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    name: str = ""
    target_mean: float | None = None
    target_std: float | None = None

    @property
    def direction(self) -> Direction:
        return metric_direction(self.task)


def metric_direction(task: Task) -> Direction:
    return Direction.MINIMIZE if task is Task.REGRESSION else Direction.MAXIMIZE
