"""
Run configuration: a flat ``key=value`` file validated into pydantic models.

Keys are dotted paths into the nested models, e.g. ``model.retrieval.m=96``.
Per-column numeric policies use ``data.policy.<column>=standardize``.
"""

import logging
from pathlib import Path
from typing import Any, Literal

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config import settings
from models.enums import EmbeddingScheme, ModelKind, NumPolicy, SimilarityKind, ValueKind
from services.errors import ConfigError

logger = logging.getLogger(__name__)

TABR_S_LR = 0.0003121273641315169
TABR_S_WEIGHT_DECAY = 0.0000012260352006404615
TABR_S_ATTENTION_DROPOUT = 0.38920071545944357
TABR_S_FFN_DROPOUT = 0.38852797479169876


def _none_string(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class NumEmbeddingConfig(_Section):
    scheme: EmbeddingScheme = EmbeddingScheme.NONE
    d_embedding: int = Field(16, ge=1)
    n_frequencies: int = Field(48, ge=1)
    frequency_scale: float = Field(0.1, gt=0)


class RetrievalConfig(_Section):
    similarity: SimilarityKind = SimilarityKind.L2_KEY
    value: ValueKind = ValueKind.WY_T
    m: int = Field(96, ge=1)
    scale_by_sqrt_d: bool = False
    include_self: bool = False
    attention_dropout: float = Field(TABR_S_ATTENTION_DROPOUT, ge=0, lt=1)
    candidate_cap: int | None = Field(None, ge=1)

    @field_validator("candidate_cap", mode="before")
    @classmethod
    def blank_to_none(cls, value: Any) -> Any:
        return _none_string(value)


class ModelConfig(_Section):
    """Architecture: TabR (encoder, retrieval, predictor), the MLP baseline or kNN."""

    kind: ModelKind = ModelKind.TABR_S
    d: int = Field(265, ge=1)
    encoder_blocks: int = Field(0, ge=0)
    predictor_blocks: int = Field(1, ge=1)
    ffn_dropout: float = Field(TABR_S_FFN_DROPOUT, ge=0, lt=1)
    mlp_layers: int = Field(3, ge=1)
    knn_k: int = Field(10, ge=1)
    embedding: NumEmbeddingConfig = Field(default_factory=NumEmbeddingConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)


class DataConfig(_Section):
    dir: str | None = None
    name: str | None = None
    policy: NumPolicy = NumPolicy.QUANTILE
    column_policies: dict[int, NumPolicy] = Field(default_factory=dict)

    @field_validator("dir", "name", mode="before")
    @classmethod
    def blank_to_none(cls, value: Any) -> Any:
        return _none_string(value)

    def policies(self, n_num: int) -> list[NumPolicy]:
        unknown = [column for column in self.column_policies if not 0 <= column < n_num]
        if unknown:
            raise ConfigError(f"data.policy given for unknown numeric columns {sorted(unknown)} (dataset has {n_num})")
        return [self.column_policies.get(j, self.policy) for j in range(n_num)]


class TrainConfig(_Section):
    batch_size: int | None = Field(None, ge=1)
    eval_batch_size: int = Field(1024, ge=1)
    lr: float = Field(TABR_S_LR, gt=0)
    weight_decay: float = Field(TABR_S_WEIGHT_DECAY, ge=0)
    patience: int = Field(16, ge=0)
    max_epochs: int | None = Field(None, ge=1)
    seed: int = Field(0, ge=0)
    freeze_after: int | None = Field(None, ge=0)
    track_delta_context: bool = False
    dtype: Literal["float32", "float64"] = Field(default_factory=lambda: settings.TABR_DTYPE)

    @field_validator("batch_size", "max_epochs", "freeze_after", mode="before")
    @classmethod
    def blank_to_none(cls, value: Any) -> Any:
        return _none_string(value)


class EvalConfig(_Section):
    seeds: int = Field(15, ge=1)
    group_size: int = Field(5, ge=1)
    n_groups: int = Field(3, ge=1)


class RunConfig(_Section):
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> "RunConfig":
        nested: dict[str, Any] = {}
        for key, value in values.items():
            if value is None:
                raise ConfigError(f"config key '{key}' has no value")
            parts = key.strip().split(".")
            if len(parts) == 3 and parts[:2] == ["data", "policy"]:
                parts = ["data", "column_policies", parts[2]]
            node = nested
            for part in parts[:-1]:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ConfigError(f"config key '{key}' conflicts with '{'.'.join(parts[:-1])}'")
                node = child
            if isinstance(node.get(parts[-1]), dict):
                raise ConfigError(f"config key '{key}' names a section, not a value")
            node[parts[-1]] = value
        try:
            return cls.model_validate(nested)
        except ValidationError as e:
            raise ConfigError(_describe(e)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_flat(dict(dotenv_values(path)))

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        flat = self.to_flat()
        flat.update({key: _format(value) for key, value in overrides.items()})
        return RunConfig.from_flat(flat)

    def to_flat(self) -> dict[str, str]:
        flat: dict[str, str] = {}
        _flatten(self.model_dump(mode="json"), "", flat)
        return dict(sorted(flat.items()))

    def dump(self, path: str | Path) -> Path:
        """Write the resolved configuration in the same flat format it is read from."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{key}={value}" for key, value in self.to_flat().items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _flatten(node: dict, prefix: str, out: dict[str, str]) -> None:
    for key, value in node.items():
        if prefix == "data." and key == "column_policies":
            for column, policy in value.items():
                out[f"data.policy.{column}"] = _format(policy)
            continue
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            _flatten(value, f"{full}.", out)
        else:
            out[full] = _format(value)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    return repr(value) if isinstance(value, float) else str(value)


def _describe(error: ValidationError) -> str:
    problems = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"])
        key = key.replace("data.column_policies.", "data.policy.")
        if item["type"] == "extra_forbidden":
            problems.append(f"unknown config key '{key}'")
        else:
            problems.append(f"{key}: {item['msg']}")
    return "; ".join(problems)
