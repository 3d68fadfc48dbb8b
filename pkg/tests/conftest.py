"""
Shared fixtures: small synthetic datasets written in the on-disk layout,
plus model and training configs sized for fast CPU runs.
"""

import numpy as np
import pytest

from config.run_config import ModelConfig, RetrievalConfig, RunConfig, TrainConfig
from models.enums import Task
from services.data_pipeline import DataService

N_ROWS = 60
SPLITS = {
    "train": np.arange(0, 36),
    "val": np.arange(36, 48),
    "test": np.arange(48, 60),
}


def _features(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X_num = rng.standard_normal((N_ROWS, 3))
    X_bin = rng.integers(0, 2, (N_ROWS, 1))
    X_cat = rng.choice(np.array(["red", "green", "blue"]), size=(N_ROWS, 1))
    return X_num, X_bin, X_cat


@pytest.fixture
def regression_dir(tmp_path):
    rng = np.random.default_rng(0)
    X_num, X_bin, X_cat = _features(rng)
    Y = 2.0 * X_num[:, 0] - X_num[:, 1] + 0.5 * X_bin[:, 0] + 0.1 * rng.standard_normal(N_ROWS)
    return DataService.write_dataset(
        tmp_path / "SYNREG", X_num, Y, Task.REGRESSION, SPLITS, X_bin=X_bin, X_cat=X_cat
    )


@pytest.fixture
def multiclass_dir(tmp_path):
    rng = np.random.default_rng(1)
    X_num, X_bin, X_cat = _features(rng)
    Y = np.argmax(X_num, axis=1)
    return DataService.write_dataset(
        tmp_path / "SYNCLS", X_num, Y, Task.MULTICLASS, SPLITS, X_bin=X_bin, X_cat=X_cat, n_classes=3
    )


def _prepare(directory):
    dataset = DataService.load_dataset(directory)
    preprocessor = DataService.fit_preprocessor(dataset)
    return DataService.prepare(dataset, preprocessor)


@pytest.fixture
def regression_data(regression_dir):
    return _prepare(regression_dir)


@pytest.fixture
def multiclass_data(multiclass_dir):
    return _prepare(multiclass_dir)


@pytest.fixture
def small_model_config():
    return ModelConfig(
        d=8,
        ffn_dropout=0.1,
        retrieval=RetrievalConfig(m=4, attention_dropout=0.1),
    )


@pytest.fixture
def fast_train_config():
    return TrainConfig(batch_size=16, max_epochs=3, patience=2, lr=1e-3, weight_decay=1e-5, dtype="float64")


@pytest.fixture
def small_run_config(regression_dir, small_model_config, fast_train_config):
    return RunConfig(model=small_model_config, train=fast_train_config).with_overrides({
        "data.dir": str(regression_dir),
        "data.name": regression_dir.name,
        "eval.seeds": 2,
        "eval.group_size": 1,
        "eval.n_groups": 2,
    })
