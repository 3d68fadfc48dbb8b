"""
Dataset loading, preprocessing fitted on the training split, and batching.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from scipy.special import ndtri
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import OneHotEncoder, StandardScaler
from sklearn.utils.validation import check_is_fitted

from models.dataset import SPLITS, Dataset, FeatureLayout, PreparedData
from models.enums import NumPolicy, Task
from services.errors import ConfigError, DatasetLoadError
from services.seeding import stream

logger = logging.getLogger(__name__)

QUANTILE_CLIP = 1e-6
MAX_QUANTILES = 1000


class QuantileNormalTransformer(BaseEstimator, TransformerMixin):
    """
    Maps each column through its empirical CDF (linear interpolation between
    up to ``n_quantiles`` reference quantiles) and then through the inverse
    normal CDF. Constant columns map to 0.
    """

    def __init__(self, n_quantiles: int = MAX_QUANTILES, clip: float = QUANTILE_CLIP):
        self.n_quantiles = n_quantiles
        self.clip = clip

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError(f"quantile transform needs a non-empty 2-D array, got {X.shape}")
        self.n_quantiles_ = max(1, min(self.n_quantiles, X.shape[0]))
        self.references_ = np.linspace(0.0, 1.0, self.n_quantiles_)
        self.quantiles_ = np.quantile(X, self.references_, axis=0).reshape(self.n_quantiles_, X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "quantiles_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.quantiles_.shape[1]:
            raise ConfigError(f"quantile transform fitted on {self.quantiles_.shape[1]} columns, got {X.shape}")
        out = np.zeros_like(X)
        for j in range(X.shape[1]):
            quantiles = self.quantiles_[:, j]
            if quantiles[0] == quantiles[-1]:
                continue
            # averaging both interpolation directions keeps repeated quantiles centered
            forward = np.interp(X[:, j], quantiles, self.references_)
            backward = np.interp(-X[:, j], -quantiles[::-1], -self.references_[::-1])
            cdf = 0.5 * (forward - backward)
            out[:, j] = ndtri(np.clip(cdf, self.clip, 1.0 - self.clip))
        return out


@dataclass
class Preprocessor:
    """Statistics fitted on the training rows; applied identically to every split."""

    policies: tuple[NumPolicy, ...]
    quantile_columns: tuple[int, ...]
    standardize_columns: tuple[int, ...]
    quantile: QuantileNormalTransformer | None
    scaler: StandardScaler | None
    onehot: OneHotEncoder | None
    n_bin: int
    n_cat: int
    layout: FeatureLayout
    task: Task
    n_classes: int | None
    target_mean: float | None = None
    target_std: float | None = None


class DataService:

    @staticmethod
    def load_dataset(directory: str | Path) -> Dataset:
        """
        Load a dataset directory: meta.txt, X_num/X_bin/X_cat CSVs, Y.csv and
        the three split index files.

        Raises:
            DatasetLoadError: naming the offending file (and line when known).
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise DatasetLoadError("dataset directory not found", file=str(directory))

        meta_path = directory / "meta.txt"
        if not meta_path.is_file():
            raise DatasetLoadError("missing file", file="meta.txt")
        meta = dotenv_values(meta_path)
        try:
            task = Task(meta.get("task"))
        except ValueError:
            raise DatasetLoadError(f"unknown task '{meta.get('task')}'", file="meta.txt") from None
        n = DataService._meta_int(meta, "n")
        n_classes = None
        if task is Task.BINCLASS:
            n_classes = DataService._meta_int(meta, "n_classes") if meta.get("n_classes") else 2
            if n_classes != 2:
                raise DatasetLoadError(f"binclass requires n_classes=2, got {n_classes}", file="meta.txt")
        elif task is Task.MULTICLASS:
            n_classes = DataService._meta_int(meta, "n_classes")
            if n_classes < 2:
                raise DatasetLoadError(f"multiclass requires n_classes >= 2, got {n_classes}", file="meta.txt")

        X_num = DataService._read_numeric(directory, "X_num.csv", n)
        X_bin = DataService._read_numeric(directory, "X_bin.csv", n)
        bad = np.argwhere((X_bin != 0) & (X_bin != 1))
        if bad.size:
            raise DatasetLoadError("binary feature outside {0,1}", file="X_bin.csv", line=int(bad[0, 0]) + 1)
        X_cat, cardinalities = DataService._read_categorical(directory, n)
        Y = DataService._read_labels(directory, n, task, n_classes)
        splits = DataService._read_splits(directory, n)

        logger.info(
            f"Loaded dataset {directory.name}: n={n}, p_num={X_num.shape[1]}, p_bin={X_bin.shape[1]}, "
            f"p_cat={X_cat.shape[1]}, task={task.value}"
        )
        return Dataset(
            X_num=X_num,
            X_bin=X_bin,
            X_cat=X_cat,
            cat_cardinalities=cardinalities,
            Y=Y,
            task=task,
            n_classes=n_classes,
            splits=splits,
            name=directory.name,
        )

    @staticmethod
    def fit_preprocessor(
        ds: Dataset,
        policy: NumPolicy | str | list = NumPolicy.QUANTILE,
        train_idx: np.ndarray | None = None,
    ) -> Preprocessor:
        """
        Fit per-column numeric transforms, one-hot maps and the regression
        target statistics on the training rows only.

        Args:
            ds: Loaded dataset.
            policy: One policy for all numeric columns, or one per column.
            train_idx: Rows to fit on; defaults to the training split.
        """
        if isinstance(policy, (str, NumPolicy)):
            policies = [NumPolicy(policy)] * ds.n_num
        else:
            policies = [NumPolicy(p) for p in policy]
        if len(policies) != ds.n_num:
            raise ConfigError(f"{len(policies)} numeric policies given for {ds.n_num} numeric columns")

        train_idx = ds.splits["train"] if train_idx is None else np.asarray(train_idx)
        if len(train_idx) == 0:
            raise ConfigError("training split is empty")
        X_num = ds.X_num[train_idx]
        if np.isnan(X_num).any():
            raise DatasetLoadError("NaN in numeric features; imputation is not supported", file="X_num.csv")

        quantile_columns = tuple(j for j, p in enumerate(policies) if p is NumPolicy.QUANTILE)
        standardize_columns = tuple(j for j, p in enumerate(policies) if p is NumPolicy.STANDARDIZE)

        quantile = None
        if quantile_columns:
            quantile = QuantileNormalTransformer().fit(X_num[:, list(quantile_columns)])

        scaler = None
        if standardize_columns:
            scaler = StandardScaler().fit(X_num[:, list(standardize_columns)])
            for column, variance in zip(standardize_columns, scaler.var_):
                if variance == 0:
                    logger.warning(f"numeric column {column} has zero variance on train; std clamped to 1")

        onehot = None
        n_onehot = 0
        if ds.n_cat:
            # width is the declared cardinality
            categories = [np.arange(c) for c in ds.cat_cardinalities]
            onehot = OneHotEncoder(categories=categories, handle_unknown="ignore", sparse_output=False, dtype=np.float64)
            onehot.fit(ds.X_cat[train_idx])
            n_onehot = int(sum(len(c) for c in onehot.categories_))

        target_mean = target_std = None
        if ds.task is Task.REGRESSION:
            y = ds.Y[train_idx].astype(np.float64)
            target_mean = float(y.mean())
            target_std = float(y.std())
            if target_std == 0:
                logger.warning("regression target is constant on train; std clamped to 1")
                target_std = 1.0

        return Preprocessor(
            policies=tuple(policies),
            quantile_columns=quantile_columns,
            standardize_columns=standardize_columns,
            quantile=quantile,
            scaler=scaler,
            onehot=onehot,
            n_bin=ds.n_bin,
            n_cat=ds.n_cat,
            layout=FeatureLayout(n_num=ds.n_num, n_bin=ds.n_bin, n_onehot=n_onehot),
            task=ds.task,
            n_classes=ds.n_classes,
            target_mean=target_mean,
            target_std=target_std,
        )

    @staticmethod
    def apply_preprocessor(
        pp: Preprocessor,
        x_num: np.ndarray,
        x_bin: np.ndarray | None = None,
        x_cat: np.ndarray | None = None,
    ) -> np.ndarray:
        """Transform raw rows into the feature layout [numeric | binary | one-hot]."""
        x_num = np.asarray(x_num, dtype=np.float64)
        if x_num.ndim == 1:
            x_num = x_num[None, :]
        n_rows = x_num.shape[0]
        x_bin = np.zeros((n_rows, 0)) if x_bin is None else np.asarray(x_bin, dtype=np.float64).reshape(n_rows, -1)
        x_cat = np.zeros((n_rows, 0), dtype=np.int64) if x_cat is None else np.asarray(x_cat).reshape(n_rows, -1)

        if x_num.shape[1] != pp.layout.n_num or x_bin.shape[1] != pp.n_bin or x_cat.shape[1] != pp.n_cat:
            raise ConfigError(
                f"rows have {x_num.shape[1]}/{x_bin.shape[1]}/{x_cat.shape[1]} numeric/binary/categorical "
                f"columns, preprocessor expects {pp.layout.n_num}/{pp.n_bin}/{pp.n_cat}"
            )
        if np.isnan(x_num).any() or np.isnan(x_bin).any():
            raise ConfigError("NaN in input rows; imputation is not supported")

        numeric = x_num.copy()
        if pp.quantile is not None:
            numeric[:, list(pp.quantile_columns)] = pp.quantile.transform(x_num[:, list(pp.quantile_columns)])
        if pp.scaler is not None:
            numeric[:, list(pp.standardize_columns)] = pp.scaler.transform(x_num[:, list(pp.standardize_columns)])

        parts = [numeric, x_bin]
        if pp.onehot is not None:
            for j, categories in enumerate(pp.onehot.categories_):
                unseen = ~np.isin(x_cat[:, j], categories)
                if unseen.any():
                    logger.warning(f"categorical column {j}: {int(unseen.sum())} rows with unseen categories")
            parts.append(pp.onehot.transform(x_cat))
        return np.concatenate(parts, axis=1)

    @staticmethod
    def transform_target(pp: Preprocessor, y: np.ndarray) -> np.ndarray:
        """Labels in training space: standardized for regression, class indices otherwise."""
        if pp.task is Task.REGRESSION:
            return (np.asarray(y, dtype=np.float64) - pp.target_mean) / pp.target_std
        return np.asarray(y, dtype=np.int64)

    @staticmethod
    def inverse_target(pp: Preprocessor, y: np.ndarray) -> np.ndarray:
        if pp.task is Task.REGRESSION:
            return np.asarray(y, dtype=np.float64) * pp.target_std + pp.target_mean
        return np.asarray(y)

    @staticmethod
    def prepare(ds: Dataset, pp: Preprocessor) -> PreparedData:
        """Apply the fitted preprocessor to every row of the dataset."""
        features = DataService.apply_preprocessor(pp, ds.X_num, ds.X_bin, ds.X_cat)
        return PreparedData(
            features=features,
            labels=DataService.transform_target(pp, ds.Y),
            targets=ds.Y,
            layout=pp.layout,
            task=ds.task,
            n_classes=ds.n_classes,
            splits={name: np.asarray(idx) for name, idx in ds.splits.items()},
            name=ds.name,
            target_mean=pp.target_mean,
            target_std=pp.target_std,
        )

    @staticmethod
    def make_batches(
        indices: np.ndarray,
        batch_size: int,
        shuffle: bool,
        seed: int = 0,
        epoch: int = 0,
    ) -> list[np.ndarray]:
        """Split indices into batches; shuffled order depends only on (seed, epoch)."""
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        indices = np.asarray(indices)
        if shuffle:
            indices = indices[stream(seed, "shuffle", epoch).permutation(len(indices))]
        return [indices[start:start + batch_size] for start in range(0, len(indices), batch_size)]

    @staticmethod
    def write_dataset(
        directory: str | Path,
        X_num: np.ndarray,
        Y: np.ndarray,
        task: Task,
        splits: dict[str, np.ndarray],
        X_bin: np.ndarray | None = None,
        X_cat: np.ndarray | None = None,
        n_classes: int | None = None,
    ) -> Path:
        """Write arrays in the directory layout ``load_dataset`` reads."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n = len(Y)
        meta = [f"task={Task(task).value}", f"n={n}"]
        if n_classes is not None:
            meta.append(f"n_classes={n_classes}")
        (directory / "meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")
        pd.DataFrame(np.asarray(X_num, dtype=np.float64)).to_csv(directory / "X_num.csv", header=False, index=False)
        for name, block in (("X_bin.csv", X_bin), ("X_cat.csv", X_cat)):
            if block is not None and np.asarray(block).size:
                pd.DataFrame(np.asarray(block)).to_csv(directory / name, header=False, index=False)
        pd.DataFrame(np.asarray(Y)).to_csv(directory / "Y.csv", header=False, index=False)
        for split in SPLITS:
            pd.DataFrame(np.asarray(splits[split], dtype=np.int64)).to_csv(
                directory / f"idx_{split}.txt", header=False, index=False
            )
        logger.info(f"Wrote dataset {directory.name} ({n} rows) to {directory}")
        return directory

    # ------------------------------------------------------------------
    # file readers

    @staticmethod
    def _meta_int(meta: dict, key: str) -> int:
        value = meta.get(key)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise DatasetLoadError(f"'{key}' must be an integer, got {value!r}", file="meta.txt") from None

    @staticmethod
    def _read_csv(path: Path, **kwargs) -> pd.DataFrame | None:
        try:
            return pd.read_csv(path, header=None, skip_blank_lines=True, **kwargs)
        except pd.errors.EmptyDataError:
            return None
        except pd.errors.ParserError as e:
            match = re.search(r"line (\d+)", str(e))
            raise DatasetLoadError(
                "ragged rows", file=path.name, line=int(match.group(1)) if match else None
            ) from None
        except ValueError as e:
            raise DatasetLoadError(f"unparseable value ({e})", file=path.name) from None

    @staticmethod
    def _check_rows(frame_rows: int, n: int, name: str) -> None:
        if frame_rows != n:
            raise DatasetLoadError(f"expected {n} rows, found {frame_rows}", file=name, line=min(frame_rows, n) + 1)

    @staticmethod
    def _read_numeric(directory: Path, name: str, n: int) -> np.ndarray:
        path = directory / name
        if not path.exists():
            return np.zeros((n, 0), dtype=np.float64)
        frame = DataService._read_csv(path, dtype=np.float64)
        if frame is None:
            raise DatasetLoadError("file is empty", file=name)
        DataService._check_rows(len(frame), n, name)
        values = frame.to_numpy(dtype=np.float64)
        missing = np.isnan(values).any(axis=1)
        if missing.any():
            raise DatasetLoadError("missing value or short row", file=name, line=int(np.argmax(missing)) + 1)
        return values

    @staticmethod
    def _read_categorical(directory: Path, n: int) -> tuple[np.ndarray, tuple[int, ...]]:
        name = "X_cat.csv"
        path = directory / name
        if not path.exists():
            return np.zeros((n, 0), dtype=np.int64), ()
        frame = DataService._read_csv(path, dtype=str, keep_default_na=False)
        if frame is None:
            raise DatasetLoadError("file is empty", file=name)
        DataService._check_rows(len(frame), n, name)
        short = frame.isna().any(axis=1).to_numpy()
        if short.any():
            raise DatasetLoadError("short row", file=name, line=int(np.argmax(short)) + 1)
        columns, cardinalities = [], []
        for column in frame.columns:
            # factorize numbers categories by first appearance
            codes, uniques = pd.factorize(frame[column], sort=False)
            columns.append(codes.astype(np.int64))
            cardinalities.append(len(uniques))
        return np.stack(columns, axis=1), tuple(cardinalities)

    @staticmethod
    def _read_labels(directory: Path, n: int, task: Task, n_classes: int | None) -> np.ndarray:
        name = "Y.csv"
        path = directory / name
        if not path.exists():
            raise DatasetLoadError("missing file", file=name)
        frame = DataService._read_csv(path, dtype=np.float64)
        if frame is None:
            raise DatasetLoadError("file is empty", file=name)
        if frame.shape[1] != 1:
            raise DatasetLoadError(f"expected one label per line, found {frame.shape[1]} columns", file=name)
        DataService._check_rows(len(frame), n, name)
        y = frame.iloc[:, 0].to_numpy(dtype=np.float64)
        if task is Task.REGRESSION:
            if not np.isfinite(y).all():
                line = int(np.argmax(~np.isfinite(y))) + 1
                raise DatasetLoadError("non-finite regression label", file=name, line=line)
            return y
        bad = ~np.isfinite(y) | (y != np.round(y)) | (y < 0) | (y >= n_classes)
        if bad.any():
            line = int(np.argmax(bad)) + 1
            raise DatasetLoadError(f"label is not a class index in [0, {n_classes})", file=name, line=line)
        return y.astype(np.int64)

    @staticmethod
    def _read_splits(directory: Path, n: int) -> dict[str, np.ndarray]:
        splits: dict[str, np.ndarray] = {}
        owner = np.full(n, -1, dtype=np.int64)
        for position, split in enumerate(SPLITS):
            name = f"idx_{split}.txt"
            path = directory / name
            if not path.exists():
                raise DatasetLoadError("missing file", file=name)
            frame = DataService._read_csv(path, dtype=np.int64)
            if frame is None or len(frame) == 0:
                raise DatasetLoadError("empty split", file=name)
            idx = frame.iloc[:, 0].to_numpy(dtype=np.int64)
            out_of_range = (idx < 0) | (idx >= n)
            if out_of_range.any():
                line = int(np.argmax(out_of_range)) + 1
                raise DatasetLoadError(f"row index {idx[line - 1]} outside [0, {n})", file=name, line=line)
            _, first = np.unique(idx, return_index=True)
            if len(first) != len(idx):
                duplicate = np.setdiff1d(np.arange(len(idx)), first)[0]
                raise DatasetLoadError(f"duplicate row index {idx[duplicate]}", file=name, line=int(duplicate) + 1)
            taken = owner[idx] >= 0
            if taken.any():
                line = int(np.argmax(taken)) + 1
                other = SPLITS[owner[idx[line - 1]]]
                raise DatasetLoadError(
                    f"row index {idx[line - 1]} also appears in idx_{other}.txt (overlapping splits)",
                    file=name,
                    line=line,
                )
            owner[idx] = position
            splits[split] = idx
        missing = np.flatnonzero(owner < 0)
        if missing.size:
            raise DatasetLoadError(f"{missing.size} rows belong to no split (first: {missing[0]})", file="idx_train.txt")
        return splits
