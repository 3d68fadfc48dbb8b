"""
Bundled presets: architecture defaults, the retrieval design ladder,
the similarity/value ablation grid and per-dataset batch sizes.
"""

from pathlib import Path

from config.run_config import RunConfig
from services.errors import ConfigError

PRESET_DIR = Path(__file__).parent / "presets"

DEFAULT_BATCH_SIZE = 256

DATASET_BATCH_SIZES = {
    "CH": 128,
    "CA": 256,
    "HO": 256,
    "AD": 256,
    "DI": 512,
    "OT": 512,
    "HI": 512,
    "BL": 512,
    "WE": 1024,
    "CO": 1024,
}

# Overrides on top of the TabR-S defaults of RunConfig.
ARCHITECTURES: dict[str, dict[str, str]] = {
    "tabr-s": {},
    "tabr": {
        "model.kind": "tabr",
        "model.encoder_blocks": "1",
        "model.predictor_blocks": "1",
        "model.embedding.scheme": "PLR-lite",
    },
    "mlp": {
        "model.kind": "mlp",
        "model.d": "384",
        "model.mlp_layers": "3",
        "model.ffn_dropout": "0.1",
        "train.lr": "0.0003",
        "train.weight_decay": "0.00001",
    },
    "knn": {
        "model.kind": "knn",
        "model.knn_k": "10",
    },
}

LADDER: dict[str, dict[str, str]] = {
    "Step-0": {
        "model.retrieval.similarity": "dotQK",
        "model.retrieval.value": "WV",
        "model.retrieval.scale_by_sqrt_d": "true",
        "model.retrieval.include_self": "true",
    },
    "Step-1": {
        "model.retrieval.similarity": "dotQK",
        "model.retrieval.value": "WY+WV",
        "model.retrieval.scale_by_sqrt_d": "true",
        "model.retrieval.include_self": "true",
    },
    "Step-2": {
        "model.retrieval.similarity": "L2key",
        "model.retrieval.value": "WY+WV",
        "model.retrieval.scale_by_sqrt_d": "true",
        "model.retrieval.include_self": "true",
    },
    "Step-3": {
        "model.retrieval.similarity": "L2key",
        "model.retrieval.value": "WY+T",
        "model.retrieval.scale_by_sqrt_d": "true",
        "model.retrieval.include_self": "true",
    },
    "Step-4": {
        "model.retrieval.similarity": "L2key",
        "model.retrieval.value": "WY+T",
        "model.retrieval.scale_by_sqrt_d": "false",
        "model.retrieval.include_self": "false",
    },
}


def ablation_grid() -> dict[str, dict[str, str]]:
    """The eight {L2} x {shared query/key} x {label embedding} combinations."""
    similarity = {
        (False, False): "dotQK",
        (False, True): "dotK",
        (True, False): "L2QK",
        (True, True): "L2key",
    }
    grid = {}
    for l2 in (False, True):
        for shared in (False, True):
            for labels in (False, True):
                name = f"L2={'on' if l2 else 'off'},WQ=WK={'on' if shared else 'off'},WY={'on' if labels else 'off'}"
                grid[name] = {
                    "model.retrieval.similarity": similarity[(l2, shared)],
                    "model.retrieval.value": "WY+WV" if labels else "WV",
                    "model.retrieval.scale_by_sqrt_d": "true",
                    "model.retrieval.include_self": "true",
                }
    return grid


def batch_size_for(dataset_name: str | None) -> int:
    if dataset_name is None:
        return DEFAULT_BATCH_SIZE
    return DATASET_BATCH_SIZES.get(dataset_name.upper(), DEFAULT_BATCH_SIZE)


def preset_config(architecture: str, dataset_name: str | None = None) -> RunConfig:
    try:
        overrides = dict(ARCHITECTURES[architecture])
    except KeyError:
        raise ConfigError(f"unknown architecture preset '{architecture}' (choose from {sorted(ARCHITECTURES)})") from None
    if dataset_name is not None:
        overrides["data.name"] = dataset_name
    return RunConfig().with_overrides(overrides)


def load_run_config(path_or_name: str) -> RunConfig:
    """Read a config file, or a bundled preset by file name (``tabr_s_ca.cfg``)."""
    path = Path(path_or_name)
    if not path.is_file():
        bundled = PRESET_DIR / path.name
        if not bundled.is_file():
            raise ConfigError(f"config file not found: {path_or_name}")
        path = bundled
    return RunConfig.from_file(path)


def resolve(config: RunConfig) -> RunConfig:
    """Fill values that depend on the dataset, such as the default batch size."""
    if config.train.batch_size is not None:
        return config
    return config.with_overrides({"train.batch_size": batch_size_for(config.data.name)})
