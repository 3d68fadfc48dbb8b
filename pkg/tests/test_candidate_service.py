import numpy as np
import pytest

from config.run_config import ModelConfig, RetrievalConfig
from models.dataset import FeatureLayout
from models.enums import Task
from services.autodiff import Tensor
from services.candidate_service import CandidateService
from services.errors import ConfigError
from services.model_service import ModelService

LAYOUT = FeatureLayout(n_num=3, n_bin=0, n_onehot=0)


@pytest.fixture
def model():
    return ModelService.create_model(ModelConfig(d=6, retrieval=RetrievalConfig(m=3)), LAYOUT, Task.REGRESSION,
                                     None, seed=0)


@pytest.fixture
def rows():
    return np.random.default_rng(0).standard_normal((40, 3))


def test_rebuilding_gives_identical_keys(model, rows):
    first = CandidateService.build_store(model, rows, np.zeros(40))
    second = CandidateService.build_store(model, rows, np.zeros(40))
    np.testing.assert_array_equal(first.encoded.keys, second.encoded.keys)
    assert first.size == len(first.labels) == len(first.encoded.keys) == 40
    assert first.version == model.version()


def test_adding_nothing_keeps_the_store(model, rows):
    store = CandidateService.build_store(model, rows, np.zeros(40))
    assert CandidateService.add_candidates(store, np.zeros((0, 3)), np.zeros(0), model) is store


def test_adding_rows_equals_building_on_the_union(model, rows):
    labels = np.linspace(-1, 1, 40)
    grown = CandidateService.add_candidates(
        CandidateService.build_store(model, rows[:10], labels[:10]), rows[10:], labels[10:], model
    )
    full = CandidateService.build_store(model, rows, labels)
    np.testing.assert_allclose(grown.encoded.keys, full.encoded.keys, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(grown.labels, full.labels)

    queries = np.random.default_rng(1).standard_normal((8, 3))
    np.testing.assert_allclose(
        CandidateService.predict(model, grown, queries),
        CandidateService.predict(model, full, queries),
        rtol=1e-10,
    )


def test_growing_store_is_a_superset(model, rows):
    small = CandidateService.build_store(model, rows[:4], np.zeros(4))
    large = CandidateService.add_candidates(small, rows[4:], np.zeros(36), model)
    np.testing.assert_array_equal(large.encoded.keys[:4], small.encoded.keys)
    assert large.size == 40


def test_version_mismatch_is_rejected(model, rows):
    store = CandidateService.build_store(model, rows, np.zeros(40))
    weight = model.params["retrieval.key.weight"]
    model.params["retrieval.key.weight"] = Tensor(weight.data + 0.1, requires_grad=True, name=weight.name)
    with pytest.raises(ConfigError, match="version"):
        CandidateService.add_candidates(store, rows[:1], np.zeros(1), model)
    with pytest.raises(ConfigError, match="version"):
        CandidateService.predict(model, store, rows[:1])


def test_row_width_and_label_count_are_checked(model, rows):
    with pytest.raises(ConfigError):
        CandidateService.build_store(model, rows[:, :2], np.zeros(40))
    with pytest.raises(ConfigError):
        CandidateService.build_store(model, rows, np.zeros(39))


def test_class_labels_must_be_in_range(rows):
    model = ModelService.create_model(ModelConfig(d=6, retrieval=RetrievalConfig(m=3)), LAYOUT, Task.MULTICLASS,
                                      3, seed=0)
    with pytest.raises(ConfigError):
        CandidateService.build_store(model, rows[:3], np.array([0, 1, 3]))
    with pytest.raises(ConfigError):
        CandidateService.build_store(model, rows[:3], np.array([0, 1.5, 2]))
    store = CandidateService.build_store(model, rows[:3], np.array([0.0, 1.0, 2.0]))
    assert store.labels.dtype == np.int64
