import numpy as np
import pytest

from config.run_config import ModelConfig, RetrievalConfig
from models.dataset import FeatureLayout
from models.enums import ModelKind, Task
from services import autodiff as ad
from services.autodiff import Graph, Tensor
from services.backbone import BackboneService
from services.candidate_service import CandidateService
from services.errors import ConfigError
from services.model_service import ModelService
from services.retrieval import RetrievalService

LAYOUT = FeatureLayout(n_num=2, n_bin=1, n_onehot=2)
CONFIG = ModelConfig(d=6, retrieval=RetrievalConfig(m=2))


def _rows(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.standard_normal((n, 2)), rng.integers(0, 2, (n, 1)), np.eye(2)[rng.integers(0, 2, n)]],
                          axis=1)


def test_same_seed_gives_identical_parameters():
    first = ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=5)
    second = ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=5)
    other = ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=6)
    assert first.version() == second.version()
    assert first.version() != other.version()
    assert list(first.params) == list(second.params)


def test_parameters_are_declared_in_module_order():
    names = list(ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=0).params)
    assert names[0] == "input.weight"
    assert names.index("retrieval.key.weight") < names.index("predictor.0.linear1.weight")
    assert names[-1] == "head.linear.bias"


def test_knn_has_no_model():
    with pytest.raises(ConfigError):
        ModelService.create_model(ModelConfig(kind=ModelKind.KNN), LAYOUT, Task.REGRESSION, None, seed=0)


def test_classification_needs_class_count():
    with pytest.raises(ConfigError):
        ModelService.create_model(CONFIG, LAYOUT, Task.MULTICLASS, None, seed=0)


def test_float32_storage():
    with ad.precision("float32"):
        model = ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=0)
    assert model.dtype == np.float32
    rows = _rows(6)
    store = CandidateService.build_store(model, rows, np.zeros(6))
    assert store.encoded.keys.dtype == np.float32
    assert CandidateService.predict(model, store, rows[:2]).dtype == np.float32


def test_retrieval_model_needs_candidates_to_predict():
    model = ModelService.create_model(CONFIG, LAYOUT, Task.REGRESSION, None, seed=0)
    with pytest.raises(ConfigError):
        ModelService.predict(model, _rows(3))
    with pytest.raises(ConfigError):
        ModelService.forward(model, _rows(3))


def test_mlp_predicts_without_candidates():
    cfg = ModelConfig(kind=ModelKind.MLP, d=8, mlp_layers=2)
    model = ModelService.create_model(cfg, LAYOUT, Task.MULTICLASS, 4, seed=0)
    outputs, record = ModelService.predict(model, _rows(7), batch_size=3)
    assert outputs.shape == (7, 4)
    assert record is None


def test_prediction_does_not_depend_on_batch_size():
    model = ModelService.create_model(CONFIG, LAYOUT, Task.BINCLASS, 2, seed=0)
    rows = _rows(20)
    candidates = RetrievalService.encode_candidates(model, rows)
    labels = np.arange(20) % 2
    small, _ = ModelService.predict(model, rows, candidates, labels, batch_size=3, exclude=np.arange(20))
    large, _ = ModelService.predict(model, rows, candidates, labels, batch_size=64, exclude=np.arange(20))
    np.testing.assert_allclose(small, large, rtol=1e-10, atol=1e-12)
    assert small.shape == (20, 1)


@pytest.mark.parametrize("task,n_classes,labels", [
    (Task.REGRESSION, None, np.array([0.5, -1.0, 2.0])),
    (Task.BINCLASS, 2, np.array([0, 1, 1])),
    (Task.MULTICLASS, 3, np.array([2, 0, 1])),
])
def test_loss_is_scalar_and_differentiable(task, n_classes, labels):
    cfg = ModelConfig(kind=ModelKind.MLP, d=4, mlp_layers=1, ffn_dropout=0.0)
    model = ModelService.create_model(cfg, LAYOUT, task, n_classes, seed=0)
    with Graph() as graph:
        output, _ = ModelService.forward(model, _rows(3))
        loss = ModelService.loss(model, output, labels)
    grads = ad.backward(graph, loss, model.params)
    assert np.isfinite(loss.item())
    assert set(grads) == set(model.params)


def test_without_label_and_correction_terms_retrieval_adds_nothing():
    config = ModelConfig(d=6, encoder_blocks=1, retrieval=RetrievalConfig(m=2))
    model = ModelService.create_model(config, LAYOUT, Task.REGRESSION, None, seed=2)
    for name in ("retrieval.label.weight", "retrieval.label.bias", "retrieval.t.linear2.weight"):
        model.params[name] = Tensor(np.zeros_like(model.params[name].data))
    rows = _rows(8, seed=1)
    store = CandidateService.build_store(model, rows, np.linspace(-1.0, 1.0, 8))

    with ad.precision(model.dtype), ad.no_grad():
        hidden = BackboneService.input_module(rows[:4], model.params, config, LAYOUT)
        hidden = BackboneService.encoder_forward(hidden, model.params, config, training=False)
        expected = BackboneService.predictor_forward(hidden, model.params, config, training=False).data
    np.testing.assert_allclose(CandidateService.predict(model, store, rows[:4]), expected, rtol=1e-6, atol=1e-7)
