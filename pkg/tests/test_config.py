import pytest

from config.presets import (
    DEFAULT_BATCH_SIZE,
    LADDER,
    ablation_grid,
    batch_size_for,
    load_run_config,
    preset_config,
    resolve,
)
from config.run_config import TABR_S_LR, RunConfig
from models.enums import ModelKind, NumPolicy, SimilarityKind, ValueKind
from services.errors import ConfigError


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="model.retrieval.mm"):
        RunConfig.from_flat({"model.retrieval.mm": "4"})


def test_invalid_value_is_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_flat({"model.retrieval.m": "0"})


def test_dump_round_trips(tmp_path):
    config = preset_config("tabr", "CA").with_overrides({
        "data.policy.1": "standardize",
        "train.freeze_after": 4,
        "model.retrieval.candidate_cap": "none",
    })
    path = config.dump(tmp_path / "config.cfg")
    again = RunConfig.from_file(path)
    assert again == config
    assert again.data.column_policies == {1: NumPolicy.STANDARDIZE}
    assert again.train.freeze_after == 4


def test_tabr_s_defaults():
    config = preset_config("tabr-s")
    assert config.model.kind is ModelKind.TABR_S
    assert config.model.d == 265
    assert config.model.retrieval.m == 96
    assert config.model.retrieval.similarity is SimilarityKind.L2_KEY
    assert config.model.retrieval.value is ValueKind.WY_T
    assert not config.model.retrieval.scale_by_sqrt_d
    assert not config.model.retrieval.include_self
    assert config.train.lr == TABR_S_LR
    assert config.train.patience == 16


def test_bundled_preset_loads_by_name():
    config = load_run_config("tabr_s_ca.cfg")
    assert config.data.name == "CA"
    assert config.train.batch_size == 256
    assert config.train.track_delta_context


def test_missing_config_file_is_reported():
    with pytest.raises(ConfigError, match="not found"):
        load_run_config("no_such_preset.cfg")


def test_unknown_architecture_is_rejected():
    with pytest.raises(ConfigError):
        preset_config("transformer")


def test_ladder_ends_at_tabr_s():
    assert list(LADDER) == ["Step-0", "Step-1", "Step-2", "Step-3", "Step-4"]
    final = preset_config("tabr-s").with_overrides(LADDER["Step-4"])
    assert final == preset_config("tabr-s")
    first = preset_config("tabr-s").with_overrides(LADDER["Step-0"])
    assert first.model.retrieval.similarity is SimilarityKind.DOT_QK
    assert first.model.retrieval.value is ValueKind.WV
    assert first.model.retrieval.include_self


def test_ablation_grid_has_eight_distinct_combinations():
    grid = ablation_grid()
    assert len(grid) == 8
    combos = {(o["model.retrieval.similarity"], o["model.retrieval.value"]) for o in grid.values()}
    assert len(combos) == 8


def test_batch_size_defaults():
    assert batch_size_for("CH") == 128
    assert batch_size_for("co") == 1024
    assert batch_size_for("unknown") == DEFAULT_BATCH_SIZE
    assert resolve(preset_config("tabr-s", "WE")).train.batch_size == 1024


def test_column_policy_for_unknown_column_is_rejected():
    config = RunConfig.from_flat({"data.policy.5": "none"})
    with pytest.raises(ConfigError):
        config.data.policies(3)
