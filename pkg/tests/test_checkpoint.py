import numpy as np
import pytest

from config.run_config import ModelConfig, RetrievalConfig
from models.dataset import FeatureLayout
from models.enums import Task
from services.candidate_service import CandidateService
from services.checkpoint_service import MAGIC, CheckpointService
from services.errors import CheckpointError
from services.model_service import ModelService
from services.retrieval import RetrievalService

LAYOUT = FeatureLayout(n_num=2, n_bin=1, n_onehot=0)


@pytest.fixture
def model():
    config = ModelConfig(d=5, encoder_blocks=1, retrieval=RetrievalConfig(m=2))
    return ModelService.create_model(config, LAYOUT, Task.MULTICLASS, 3, seed=1)


@pytest.fixture
def rows():
    return np.random.default_rng(0).standard_normal((12, 3))


def test_round_trip(tmp_path, model, rows):
    cache = RetrievalService.freeze_contexts(model, rows, epoch=2)
    store = CandidateService.build_store(model, rows, np.arange(12) % 3)
    path = CheckpointService.save(tmp_path / "model.ckpt", model, context_cache=cache, candidate_store=store)
    assert path.read_bytes().startswith(MAGIC)
    assert CheckpointService.manifest_path(path).is_file()

    loaded = CheckpointService.load(path)
    assert loaded.model.config == model.config
    assert loaded.model.layout == model.layout
    assert loaded.model.task is Task.MULTICLASS
    assert loaded.model.n_classes == 3
    assert list(loaded.model.params) == list(model.params)
    for name, param in model.params.items():
        np.testing.assert_array_equal(loaded.model.params[name].data, param.data)
    assert loaded.model.version() == model.version()
    np.testing.assert_array_equal(loaded.context_cache.indices, cache.indices)
    assert loaded.context_cache.frozen_at_epoch == 2
    np.testing.assert_array_equal(loaded.candidate_store.encoded.keys, store.encoded.keys)
    assert loaded.candidate_store.version == store.version

    outputs = CandidateService.predict(loaded.model, loaded.candidate_store, rows[:4])
    np.testing.assert_array_equal(outputs, CandidateService.predict(model, store, rows[:4]))


def test_model_only_checkpoint(tmp_path, model):
    loaded = CheckpointService.load(CheckpointService.save(tmp_path / "m.ckpt", model))
    assert loaded.context_cache is None
    assert loaded.candidate_store is None


def test_manifest_lists_every_array(tmp_path, model):
    path = CheckpointService.save(tmp_path / "model.ckpt", model)
    lines = CheckpointService.manifest_path(path).read_text().splitlines()
    assert len(lines) == 1 + len(model.params)
    assert lines[1].split("\t")[:2] == ["params", "input.weight"]


def test_wrong_magic_is_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(32))
    with pytest.raises(CheckpointError, match="not a TabR checkpoint"):
        CheckpointService.load(path)


def test_truncated_file_is_rejected(tmp_path, model):
    path = CheckpointService.save(tmp_path / "model.ckpt", model)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        CheckpointService.load(path)


def test_missing_file_is_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        CheckpointService.load(tmp_path / "absent.ckpt")
