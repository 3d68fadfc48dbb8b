import math

import numpy as np
import pandas as pd
import pytest
from sklearn.neighbors import NearestNeighbors

from models.dataset import FeatureLayout, PreparedData
from models.enums import Direction, Task
from models.run_result import RunResult
from services.errors import ConfigError
from services.evaluation_service import EvaluationService


def test_rmse_of_perfect_predictions_is_zero():
    assert EvaluationService.compute_metric(np.array([1.5, 2.0]), np.array([1.5, 2.0]), Task.REGRESSION) == 0.0


def test_rmse_example():
    assert EvaluationService.compute_metric(np.array([0.0, 2.0]), np.array([0.0, 0.0]), Task.REGRESSION) == \
        pytest.approx(math.sqrt(2))


def test_accuracy():
    assert EvaluationService.compute_metric(np.array([1, 0, 1, 1]), np.array([1, 1, 1, 0]), Task.BINCLASS) == 0.5


def test_metric_needs_matching_rows():
    with pytest.raises(ConfigError):
        EvaluationService.compute_metric(np.zeros(2), np.zeros(3), Task.REGRESSION)


def test_outputs_are_mapped_to_label_space():
    values = EvaluationService.outputs_to_predictions(np.array([[0.5], [-1.0]]), Task.REGRESSION, 10.0, 2.0)
    np.testing.assert_allclose(values, [11.0, 8.0])
    probabilities = EvaluationService.outputs_to_predictions(np.array([[0.0]]), Task.BINCLASS)
    np.testing.assert_allclose(probabilities, [0.5])
    assert EvaluationService.predictions_to_labels(probabilities, Task.BINCLASS).tolist() == [1]
    multi = EvaluationService.outputs_to_predictions(np.array([[0.0, 3.0, 1.0]]), Task.MULTICLASS)
    np.testing.assert_allclose(multi.sum(axis=1), 1.0)
    assert EvaluationService.predictions_to_labels(multi, Task.MULTICLASS).tolist() == [1]


def test_ensemble_of_identical_members_equals_the_member():
    rng = np.random.default_rng(0)
    targets = rng.standard_normal(20)
    member = targets + 0.3 * rng.standard_normal(20)
    single = EvaluationService.compute_metric(member, targets, Task.REGRESSION)
    assert EvaluationService.ensemble_evaluate([member] * 15, targets, Task.REGRESSION) == pytest.approx(single)

    probabilities = rng.dirichlet(np.ones(3), 20)
    labels = rng.integers(0, 3, 20)
    single = EvaluationService.score(probabilities, labels, Task.MULTICLASS)
    assert EvaluationService.ensemble_evaluate([probabilities] * 5, labels, Task.MULTICLASS) == single


def test_ensemble_reports_the_mean_group_metric():
    targets = np.zeros(4)
    groups = [np.full(4, value) for value in (0.40, 0.42, 0.41)]
    result = EvaluationService.ensemble_evaluate(groups, targets, Task.REGRESSION, group_size=1, n_groups=3)
    assert result == pytest.approx(0.41)


def test_ensemble_averages_within_consecutive_groups():
    targets = np.zeros(2)
    sets = [np.array([1.0, 1.0]), np.array([-1.0, -1.0]), np.array([2.0, 2.0]), np.array([2.0, 2.0])]
    assert EvaluationService.ensemble_evaluate(sets, targets, Task.REGRESSION, group_size=2) == pytest.approx(1.0)


def test_ensemble_rejects_incomplete_groups():
    with pytest.raises(ConfigError):
        EvaluationService.ensemble_evaluate([np.zeros(2)] * 7, np.zeros(2), Task.REGRESSION, group_size=5)
    with pytest.raises(ConfigError):
        EvaluationService.ensemble_evaluate([np.zeros(2)] * 10, np.zeros(2), Task.REGRESSION, n_groups=3)


def _result(algorithm, mean, std):
    return RunResult(algorithm=algorithm, dataset="CA", values=[mean - std, mean + std])


def test_std_uses_the_sample_formula():
    assert RunResult(algorithm="a", dataset="CA", values=[1.0, 3.0]).std == pytest.approx(math.sqrt(2))
    assert RunResult(algorithm="a", dataset="CA", values=[1.0]).std == 0.0


def test_best_set_single_algorithm():
    assert EvaluationService.best_set([_result("tabr", 0.4, 0.01)], Direction.MINIMIZE) == {"tabr"}


def test_best_set_within_std():
    results = [_result("a", 0.400, 0.005 / math.sqrt(2)), _result("b", 0.404, 0.001)]
    assert results[0].std == pytest.approx(0.005)
    assert EvaluationService.best_set(results, Direction.MINIMIZE) == {"a", "b"}


def test_best_set_outside_std():
    results = [_result("a", 0.400, 0.002 / math.sqrt(2)), _result("b", 0.404, 0.001)]
    assert EvaluationService.best_set(results, Direction.MINIMIZE) == {"a"}


def test_best_set_for_accuracy():
    results = [_result("a", 0.80, 0.0), _result("b", 0.85, 0.0)]
    assert EvaluationService.best_set(results, Direction.MAXIMIZE) == {"b"}


def test_results_table_and_report(tmp_path):
    results = [_result("a", 0.400, 0.001), _result("b", 0.500, 0.001)]
    path = EvaluationService.write_results(results, tmp_path / "results.csv")
    frame = pd.read_csv(path)
    assert frame.columns.tolist() == ["algorithm", "dataset", "mean", "std", "values"]
    report = EvaluationService.comparison_report(results, Direction.MINIMIZE)
    assert report.splitlines()[0].startswith("* a")
    assert report.splitlines()[1].startswith("  b")


def _knn_data(task, n_train=60, n_test=200, seed=0):
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    features = rng.standard_normal((n, 4))
    targets = rng.standard_normal(n) if task is Task.REGRESSION else rng.integers(0, 3, n)
    return PreparedData(
        features=features,
        labels=targets,
        targets=targets,
        layout=FeatureLayout(n_num=4, n_bin=0, n_onehot=0),
        task=task,
        n_classes=None if task is Task.REGRESSION else 3,
        splits={"train": np.arange(n_train), "val": np.array([], dtype=np.int64), "test": np.arange(n_train, n)},
    )


def test_knn_matches_exhaustive_neighbors():
    data = _knn_data(Task.REGRESSION)
    predictions = EvaluationService.knn_predict(data, 5)
    oracle = NearestNeighbors(n_neighbors=5, algorithm="brute").fit(data.features[:60])
    _, neighbors = oracle.kneighbors(data.features[60:])
    np.testing.assert_allclose(predictions, data.targets[:60][neighbors].mean(axis=1))


def test_knn_with_exact_duplicate_returns_its_label():
    data = _knn_data(Task.MULTICLASS)
    features = data.features.copy()
    features[60] = features[7]
    data = PreparedData(**{**data.__dict__, "features": features})
    assert EvaluationService.knn_predict(data, 1, query_idx=np.array([60]))[0] == data.targets[7]


def test_knn_vote_ties_go_to_the_lower_class():
    data = _knn_data(Task.MULTICLASS, n_train=2, n_test=1)
    targets = np.array([2, 1, 0])
    data = PreparedData(**{**data.__dict__, "targets": targets, "labels": targets})
    assert EvaluationService.knn_predict(data, 2).tolist() == [1]


def test_k_larger_than_training_set_is_rejected():
    with pytest.raises(ConfigError):
        EvaluationService.knn_predict(_knn_data(Task.REGRESSION, n_train=3), 4)
