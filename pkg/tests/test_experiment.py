import json

import numpy as np
import pandas as pd
import pytest

from config.run_config import RunConfig
from services.checkpoint_service import CheckpointService
from services.errors import ConfigError
from services.experiment_service import (
    CHECKPOINT_FILE,
    CONFIG_FILE,
    PREPROCESSOR_FILE,
    SUMMARY_FILE,
    TRAIN_LOG_FILE,
    ExperimentService,
)


def test_train_run_writes_artifacts(tmp_path, small_run_config):
    outcome = ExperimentService.train_run(small_run_config, tmp_path / "run")
    run_dir = tmp_path / "run"
    for name in (CONFIG_FILE, CHECKPOINT_FILE, PREPROCESSOR_FILE, SUMMARY_FILE, TRAIN_LOG_FILE):
        assert (run_dir / name).is_file()
    summary = json.loads((run_dir / SUMMARY_FILE).read_text())
    assert summary["metric"] == "rmse"
    assert summary["test_metric"] == pytest.approx(outcome.test_metric)
    assert summary["dataset"] == "SYNREG"
    assert "seconds" not in json.dumps(summary)
    assert RunConfig.from_file(run_dir / CONFIG_FILE).data.name == "SYNREG"
    assert outcome.config.train.batch_size == 16
    log = pd.read_csv(run_dir / TRAIN_LOG_FILE)
    assert log["epoch"].tolist() == [1, 2, 3]


def test_evaluate_run_matches_training(tmp_path, small_run_config):
    outcome = ExperimentService.train_run(small_run_config, tmp_path / "run")
    assert ExperimentService.evaluate_run(tmp_path / "run") == pytest.approx(outcome.test_metric, rel=1e-6)


def test_knn_run(tmp_path, small_run_config):
    config = small_run_config.with_overrides({"model.kind": "knn", "model.knn_k": 3})
    outcome = ExperimentService.train_run(config, tmp_path / "knn")
    assert outcome.model is None
    assert not (tmp_path / "knn" / CHECKPOINT_FILE).exists()
    with pytest.raises(ConfigError):
        ExperimentService.load_run(tmp_path / "knn")


def test_missing_dataset_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentService.train_run(RunConfig(), tmp_path / "run")


def test_subset_rows_are_seeded(regression_data):
    first = ExperimentService.subset_train_rows(regression_data, 0.25, seed=1)
    again = ExperimentService.subset_train_rows(regression_data, 0.25, seed=1)
    np.testing.assert_array_equal(first, again)
    assert len(first) == 9
    assert np.all(np.diff(first) > 0)
    assert set(first) <= set(regression_data.splits["train"])
    with pytest.raises(ConfigError):
        ExperimentService.subset_train_rows(regression_data, -0.5, seed=1)


def test_ensemble_eval(tmp_path, small_run_config):
    report = ExperimentService.ensemble_eval(small_run_config, tmp_path / "ens")
    assert report["n_groups"] == 2
    assert (tmp_path / "ens" / "seed_0" / SUMMARY_FILE).is_file()
    assert (tmp_path / "ens" / "seed_1" / SUMMARY_FILE).is_file()
    results = pd.read_csv(tmp_path / "ens" / "results.csv")
    assert results["values"][0].count(";") == 1
    assert report["ensemble"] == pytest.approx(report["single_mean"])


def test_ablation_ladder(tmp_path, small_run_config):
    config = small_run_config.with_overrides({"train.max_epochs": 1})
    results = ExperimentService.ablation(config, tmp_path / "ladder", seeds=1)
    assert [r.algorithm for r in results] == ["Step-0", "Step-1", "Step-2", "Step-3", "Step-4"]
    table = pd.read_csv(tmp_path / "ladder" / "ablation_ladder.csv")
    assert len(table) == 5
    assert "*" in (tmp_path / "ladder" / "ablation_ladder.txt").read_text()


def test_freeze_experiment(tmp_path, small_run_config):
    config = small_run_config.with_overrides({"train.patience": 10})
    table = ExperimentService.freeze_experiment(config, tmp_path / "freeze", [1, 0])
    assert table["setting"].tolist() == ["no-freeze", "CF-0", "CF-1"]
    assert table["relative_total_time"][0] == 1.0
    assert (tmp_path / "freeze" / "freeze_experiment.csv").is_file()
    for run in ("no_freeze", "freeze_0", "freeze_1"):
        log = pd.read_csv(tmp_path / "freeze" / run / TRAIN_LOG_FILE)
        assert log["delta_context_mean"].between(0.0, 1.0 + 1e-9).all()


def test_freeze_experiment_needs_retrieval(tmp_path, small_run_config):
    with pytest.raises(ConfigError):
        ExperimentService.freeze_experiment(small_run_config.with_overrides({"model.kind": "mlp"}), tmp_path, [1])


def test_online_candidates_grow_to_the_full_split(tmp_path, small_run_config):
    table = ExperimentService.online_candidates(small_run_config, tmp_path / "online", 0.25)
    assert table["store_size"].tolist() == [9, 18, 27, 36]
    assert table["fraction"].tolist() == [0.25, 0.5, 0.75, 1.0]
    assert np.isfinite(table["test_metric"]).all()


def test_analyses_of_a_run(tmp_path, small_run_config):
    ExperimentService.train_run(small_run_config, tmp_path / "run")
    entropy = ExperimentService.analyze_entropy(tmp_path / "run")
    assert entropy["n_candidates"] == 36
    assert 0.0 <= entropy["entropy"] <= entropy["uniform"] + 1e-12
    projection = ExperimentService.analyze_value_projection(tmp_path / "run")
    assert set(projection) == {"none", "label-line", "random-unit"}
    assert projection["none"] == pytest.approx(ExperimentService.evaluate_run(tmp_path / "run"), rel=1e-6)
    assert (tmp_path / "run" / "value_projection.json").is_file()


def test_rerun_reproduces_the_summary(tmp_path, small_run_config):
    ExperimentService.train_run(small_run_config, tmp_path / "a")
    ExperimentService.train_run(RunConfig.from_file(tmp_path / "a" / CONFIG_FILE), tmp_path / "b")
    assert (tmp_path / "a" / SUMMARY_FILE).read_bytes() == (tmp_path / "b" / SUMMARY_FILE).read_bytes()


def test_frozen_run_checkpoint_keeps_the_context_cache(tmp_path, small_run_config):
    outcome = ExperimentService.train_run(small_run_config.with_overrides({"train.freeze_after": 0}), tmp_path / "run")
    loaded = CheckpointService.load(tmp_path / "run" / CHECKPOINT_FILE)
    assert loaded.context_cache.frozen_at_epoch == 0
    np.testing.assert_array_equal(loaded.context_cache.indices, outcome.log.context_cache.indices)
    assert loaded.candidate_store.size == 36

    unfrozen = ExperimentService.train_run(small_run_config, tmp_path / "plain")
    assert unfrozen.log.context_cache is None
    assert CheckpointService.load(tmp_path / "plain" / CHECKPOINT_FILE).context_cache is None
