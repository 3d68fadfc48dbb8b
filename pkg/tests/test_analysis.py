import math

import numpy as np
import pytest

from config.run_config import ModelConfig
from models.context import ContextRecord
from models.enums import ModelKind, ValueKind
from services.analysis_service import AnalysisService, average_distribution, entropy, uniform_entropy
from services.autodiff import Tensor
from services.errors import ConfigError, UnsupportedTaskError
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from services.training_service import TrainingService


def test_uniform_distribution_entropy():
    assert entropy(np.full(6400, 1 / 6400)) == pytest.approx(math.log(6400))
    assert uniform_entropy(6400) == pytest.approx(8.764, abs=1e-3)


def test_single_atom_has_zero_entropy():
    record = ContextRecord(indices=np.zeros((5, 1), dtype=np.int64), weights=np.ones((5, 1)))
    assert entropy(average_distribution(record, 10)) == 0.0


def test_entropy_is_bounded_by_the_uniform_case():
    p = np.random.default_rng(0).dirichlet(np.ones(50))
    assert 0.0 <= entropy(p) <= math.log(50)


def test_average_distribution_puts_self_weight_on_its_own_atom():
    record = ContextRecord(
        indices=np.array([[0, 1], [1, 2]]),
        weights=np.array([[0.5, 0.25], [0.5, 0.5]]),
        self_weights=np.array([0.25, 0.0]),
    )
    np.testing.assert_allclose(average_distribution(record, 3), [0.25, 0.375, 0.25, 0.125])


def test_uniform_entropy_needs_atoms():
    with pytest.raises(ConfigError):
        uniform_entropy(0)


def test_attention_entropy_of_a_trained_model(regression_data, small_model_config, fast_train_config):
    model, _ = TrainingService.train(small_model_config, regression_data, fast_train_config)
    value = AnalysisService.attention_entropy(model, regression_data)
    assert 0.0 <= value <= math.log(len(regression_data.splits["train"]))


def test_attention_entropy_needs_retrieval(regression_data):
    model = ModelService.create_model(ModelConfig(kind=ModelKind.MLP, d=4), regression_data.layout,
                                      regression_data.task, None, seed=0)
    with pytest.raises(ConfigError):
        AnalysisService.attention_entropy(model, regression_data)


def test_projection_ablation_is_regression_only(multiclass_data, small_model_config):
    model = ModelService.create_model(small_model_config, multiclass_data.layout, multiclass_data.task, 3, seed=0)
    with pytest.raises(UnsupportedTaskError):
        AnalysisService.value_projection_ablation(model, multiclass_data)


def test_projection_ablation_needs_the_correction_module(regression_data, small_model_config):
    config = small_model_config.model_copy(
        update={"retrieval": small_model_config.retrieval.model_copy(update={"value": ValueKind.WY_WV})}
    )
    model = ModelService.create_model(config, regression_data.layout, regression_data.task, None, seed=0)
    with pytest.raises(ConfigError):
        AnalysisService.value_projection_ablation(model, regression_data)


def test_zero_direction_leaves_the_metric_unchanged(regression_data, small_model_config):
    model = ModelService.create_model(small_model_config, regression_data.layout, regression_data.task, None, seed=0)
    model.params["retrieval.label.weight"] = Tensor(np.zeros((1, small_model_config.d)))
    direction = AnalysisService.projection_direction(model, "label-line")
    np.testing.assert_array_equal(direction, 0.0)
    baseline = EvaluationService.evaluate(model, regression_data)
    assert AnalysisService.value_projection_ablation(model, regression_data) == pytest.approx(baseline, rel=1e-12)


def test_projection_directions_are_unit_vectors(regression_data, small_model_config):
    model = ModelService.create_model(small_model_config, regression_data.layout, regression_data.task, None, seed=0)
    assert AnalysisService.projection_direction(model, "none") is None
    for subspace in ("label-line", "random-unit"):
        assert np.linalg.norm(AnalysisService.projection_direction(model, subspace)) == pytest.approx(1.0)
    np.testing.assert_array_equal(
        AnalysisService.projection_direction(model, "random-unit", seed=4),
        AnalysisService.projection_direction(model, "random-unit", seed=4),
    )
    with pytest.raises(ConfigError):
        AnalysisService.projection_direction(model, "sideways")


def test_removing_the_label_direction_changes_predictions(regression_data, small_model_config, fast_train_config):
    model, _ = TrainingService.train(small_model_config, regression_data, fast_train_config)
    baseline = EvaluationService.evaluate(model, regression_data)
    ablated = AnalysisService.value_projection_ablation(model, regression_data, "label-line")
    assert np.isfinite(ablated)
    assert ablated != baseline
