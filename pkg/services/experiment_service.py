"""
Reproducible runs and the experiments built on them.

A run directory holds the resolved config, the checkpoint (with the candidate
store of the training rows), the fitted preprocessor, the training log, the
test predictions and a deterministic summary.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import joblib
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config.presets import LADDER, ablation_grid, resolve
from config.run_config import RunConfig
from config.settings import resolve_dataset_dir
from models.candidate_store import CandidateStore
from models.dataset import PreparedData
from models.enums import ModelKind, Task
from models.run_result import RunResult
from models.tabr import TabRModel
from models.train_log import TrainLog
from services.analysis_service import SUBSPACES, AnalysisService, uniform_entropy
from services.candidate_service import CandidateService
from services.checkpoint_service import CheckpointService
from services.data_pipeline import DataService, Preprocessor
from services.errors import ConfigError, TabRError
from services.evaluation_service import EvaluationService
from services.model_service import ModelService
from services.seeding import stream
from services.training_service import TrainingService

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.resolved.cfg"
CHECKPOINT_FILE = "model.ckpt"
PREPROCESSOR_FILE = "preprocessor.joblib"
TRAIN_LOG_FILE = "train_log.csv"
SUMMARY_FILE = "summary.json"
PREDICTIONS_FILE = "predictions_test.npy"
TRAIN_ROWS_FILE = "train_rows.npy"

ONLINE_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class RunOutcome:
    run_dir: Path
    config: RunConfig
    data: PreparedData
    test_metric: float
    predictions: np.ndarray
    train_idx: np.ndarray
    model: TabRModel | None = None
    log: TrainLog | None = None


@dataclass
class LoadedRun:
    run_dir: Path
    config: RunConfig
    model: TabRModel
    data: PreparedData
    preprocessor: Preprocessor
    store: CandidateStore | None
    train_idx: np.ndarray


def metric_name(task: Task) -> str:
    return "rmse" if task is Task.REGRESSION else "accuracy"


def write_summary(path: Path, summary: dict) -> Path:
    """JSON with sorted keys and no wall-clock values, so equal runs give equal bytes."""
    path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


class ExperimentService:

    # ------------------------------------------------------------------
    # data

    @staticmethod
    def load_data(config: RunConfig) -> tuple[RunConfig, PreparedData, Preprocessor]:
        """Load and preprocess the configured dataset; the config gets its name and batch size filled in."""
        source = config.data.dir or config.data.name
        if source is None:
            raise ConfigError("no dataset configured (set data.dir or data.name, or pass --dataset)")
        dataset = DataService.load_dataset(resolve_dataset_dir(source))
        if config.data.name is None:
            config = config.with_overrides({"data.name": dataset.name})
        config = resolve(config)
        preprocessor = DataService.fit_preprocessor(dataset, config.data.policies(dataset.n_num))
        data = DataService.prepare(dataset, preprocessor)
        data.name = config.data.name
        return config, data, preprocessor

    @staticmethod
    def subset_train_rows(data: PreparedData, fraction: float | None, seed: int) -> np.ndarray:
        """A seeded, sorted subset of the training split (all of it when ``fraction`` is None)."""
        train_idx = data.splits["train"]
        if fraction is None or fraction >= 1.0:
            return train_idx
        if not 0.0 < fraction < 1.0:
            raise ConfigError(f"candidates fraction must be in (0, 1], got {fraction}")
        size = max(1, int(round(fraction * len(train_idx))))
        chosen = stream(seed, "subset").choice(len(train_idx), size=size, replace=False)
        return train_idx[np.sort(chosen)]

    # ------------------------------------------------------------------
    # single runs

    @staticmethod
    def train_run(
        config: RunConfig, out_dir: str | Path, train_fraction: float | None = None, save: bool = True
    ) -> RunOutcome:
        """Train one seed and write its run directory."""
        out_dir = Path(out_dir)
        config, data, preprocessor = ExperimentService.load_data(config)
        seed = config.train.seed
        train_idx = ExperimentService.subset_train_rows(data, train_fraction, seed)
        test_idx = data.splits["test"]

        if config.model.kind is ModelKind.KNN:
            predictions = EvaluationService.knn_predict(data, config.model.knn_k, test_idx, train_idx)
            metric = EvaluationService.compute_metric(predictions, data.targets[test_idx], data.task)
            outcome = RunOutcome(out_dir, config, data, metric, predictions, train_idx)
        else:
            model, log = TrainingService.train(config.model, data, config.train, train_idx)
            predictions = EvaluationService.predict_split(
                model, data, test_idx, candidate_idx=train_idx, batch_size=config.train.eval_batch_size
            )
            metric = EvaluationService.score(predictions, data.targets[test_idx], data.task)
            outcome = RunOutcome(out_dir, config, data, metric, predictions, train_idx, model, log)

        logger.info(f"{config.model.kind.value} on {data.name}, seed {seed}: test {metric_name(data.task)} {metric:.5f}")
        if save:
            ExperimentService.write_run(outcome, preprocessor)
        return outcome

    @staticmethod
    def write_run(outcome: RunOutcome, preprocessor: Preprocessor) -> Path:
        run_dir = outcome.run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        outcome.config.dump(run_dir / CONFIG_FILE)
        joblib.dump(preprocessor, run_dir / PREPROCESSOR_FILE)
        np.save(run_dir / PREDICTIONS_FILE, outcome.predictions)
        np.save(run_dir / TRAIN_ROWS_FILE, outcome.train_idx)

        data = outcome.data
        summary = {
            "algorithm": outcome.config.model.kind.value,
            "dataset": data.name,
            "seed": outcome.config.train.seed,
            "task": data.task.value,
            "metric": metric_name(data.task),
            "test_metric": outcome.test_metric,
            "n_train": int(len(outcome.train_idx)),
        }
        if outcome.model is not None:
            model, log = outcome.model, outcome.log
            store = None
            if model.uses_retrieval:
                store = CandidateService.build_store(
                    model, data.features[outcome.train_idx], data.labels[outcome.train_idx]
                )
            CheckpointService.save(
                run_dir / CHECKPOINT_FILE, model, context_cache=log.context_cache, candidate_store=store
            )
            log.write_csv(run_dir / TRAIN_LOG_FILE)
            summary.update({
                "best_epoch": log.best_epoch,
                "best_val_metric": log.best_val_metric,
                "epochs": len(log.epochs),
                "stopped_early": log.stopped_early,
                "freeze_epoch": log.freeze_epoch,
                "n_parameters": model.n_parameters,
                "version": model.version(),
            })
        write_summary(run_dir / SUMMARY_FILE, summary)
        logger.info(f"Run artifacts written to {run_dir}")
        return run_dir

    @staticmethod
    def load_run(run_dir: str | Path) -> LoadedRun:
        """Reload a trained run: config, checkpoint, preprocessor and the dataset it was trained on."""
        run_dir = Path(run_dir)
        config = RunConfig.from_file(run_dir / CONFIG_FILE)
        if config.model.kind is ModelKind.KNN:
            raise ConfigError(f"{run_dir} is a kNN run; there is no model to load")
        checkpoint = CheckpointService.load(run_dir / CHECKPOINT_FILE)
        try:
            preprocessor = joblib.load(run_dir / PREPROCESSOR_FILE)
        except FileNotFoundError:
            raise ConfigError(f"missing {PREPROCESSOR_FILE} in {run_dir}") from None
        dataset = DataService.load_dataset(resolve_dataset_dir(config.data.dir or config.data.name))
        data = DataService.prepare(dataset, preprocessor)
        data.name = config.data.name
        rows_path = run_dir / TRAIN_ROWS_FILE
        train_idx = np.load(rows_path) if rows_path.is_file() else data.splits["train"]
        return LoadedRun(run_dir, config, checkpoint.model, data, preprocessor, checkpoint.candidate_store, train_idx)

    @staticmethod
    def evaluate_run(run_dir: str | Path, split: str = "test") -> float:
        run = ExperimentService.load_run(run_dir)
        if split not in run.data.splits:
            raise ConfigError(f"unknown split '{split}'")
        eval_idx = run.data.splits[split]
        features = run.data.features[eval_idx]
        if run.store is not None:
            outputs = CandidateService.predict(run.model, run.store, features, run.config.train.eval_batch_size)
        else:
            outputs, _ = ModelService.predict(run.model, features, batch_size=run.config.train.eval_batch_size)
        predictions = EvaluationService.outputs_to_predictions(
            outputs, run.data.task, run.data.target_mean, run.data.target_std
        )
        return EvaluationService.score(predictions, run.data.targets[eval_idx], run.data.task)

    # ------------------------------------------------------------------
    # multi-seed runs

    @staticmethod
    def seed_runs(
        config: RunConfig, out_dir: str | Path, seeds: int, jobs: int = 1, algorithm: str | None = None
    ) -> tuple[RunResult, list[np.ndarray]]:
        """Seeds 0..seeds-1, each in its own ``seed_<i>`` directory, optionally in separate processes."""
        out_dir = Path(out_dir)
        outcomes = Parallel(n_jobs=jobs)(
            delayed(_seed_job)(config, out_dir / f"seed_{seed}", seed) for seed in range(seeds)
        )
        dataset = outcomes[0][2]
        result = RunResult(
            algorithm=algorithm or config.model.kind.value,
            dataset=dataset,
            values=[metric for metric, _, _ in outcomes],
        )
        return result, [predictions for _, predictions, _ in outcomes]

    @staticmethod
    def ensemble_eval(config: RunConfig, out_dir: str | Path, jobs: int = 1) -> dict:
        """Single-model mean/std over all seeds and the metric of seed-group ensembles."""
        out_dir = Path(out_dir)
        seeds = config.eval.group_size * config.eval.n_groups
        if config.eval.seeds != seeds:
            logger.warning(f"eval.seeds={config.eval.seeds}; ensembles use {seeds} seeds")
        result, prediction_sets = ExperimentService.seed_runs(config, out_dir, seeds, jobs)
        config, data, _ = ExperimentService.load_data(config)
        test_idx = data.splits["test"]
        ensemble = EvaluationService.ensemble_evaluate(
            prediction_sets, data.targets[test_idx], data.task, config.eval.group_size, config.eval.n_groups
        )
        report = {
            "algorithm": result.algorithm,
            "dataset": result.dataset,
            "metric": metric_name(data.task),
            "single_mean": result.mean,
            "single_std": result.std,
            "ensemble": ensemble,
            "group_size": config.eval.group_size,
            "n_groups": config.eval.n_groups,
        }
        out_dir.mkdir(parents=True, exist_ok=True)
        write_summary(out_dir / "ensemble.json", report)
        EvaluationService.write_results([result], out_dir / "results.csv")
        return report

    # ------------------------------------------------------------------
    # experiments

    @staticmethod
    def ablation(
        config: RunConfig, out_dir: str | Path, seeds: int, grid: bool = False, jobs: int = 1
    ) -> list[RunResult]:
        """The Step-0..Step-4 ladder (or the eight-way similarity/value grid) over ``seeds`` seeds."""
        out_dir = Path(out_dir)
        variants = ablation_grid() if grid else LADDER
        results = []
        for name, overrides in variants.items():
            variant = config.with_overrides(overrides)
            slug = name.replace(",", "_").replace("=", "-")
            result, _ = ExperimentService.seed_runs(variant, out_dir / slug, seeds, jobs, algorithm=name)
            results.append(result)
            logger.info(f"{name}: {result.mean:.4f} ± {result.std:.4f}")

        table = "ablation_grid" if grid else "ablation_ladder"
        EvaluationService.write_results(results, out_dir / f"{table}.csv")
        direction = ExperimentService.load_data(config)[1].direction
        (out_dir / f"{table}.txt").write_text(EvaluationService.comparison_report(results, direction), encoding="utf-8")
        return results

    @staticmethod
    def freeze_experiment(config: RunConfig, out_dir: str | Path, freeze_epochs: list[int]) -> pd.DataFrame:
        """
        Test metric, total training time and mean post-freeze epoch time of every
        freeze setting, relative to the run that never freezes.
        """
        out_dir = Path(out_dir)
        if config.model.kind not in (ModelKind.TABR, ModelKind.TABR_S):
            raise ConfigError("the freeze experiment needs a retrieval model")
        config = config.with_overrides({"train.track_delta_context": True})
        baseline = ExperimentService.train_run(config.with_overrides({"train.freeze_after": None}), out_dir / "no_freeze")
        base_epoch = float(np.mean([r.seconds for r in baseline.log.epochs]))
        base_total = baseline.log.total_seconds

        rows = [{
            "setting": "no-freeze",
            "freeze_after": None,
            "test_metric": baseline.test_metric,
            "epochs": len(baseline.log.epochs),
            "total_seconds": base_total,
            "relative_total_time": 1.0,
            "relative_epoch_time": 1.0,
        }]
        for n in sorted(set(freeze_epochs)):
            run = ExperimentService.train_run(config.with_overrides({"train.freeze_after": n}), out_dir / f"freeze_{n}")
            frozen = [r.seconds for r in run.log.epochs if r.frozen]
            relative_epoch = float(np.mean(frozen)) / base_epoch if frozen and base_epoch > 0 else None
            rows.append({
                "setting": f"CF-{n}",
                "freeze_after": n,
                "test_metric": run.test_metric,
                "epochs": len(run.log.epochs),
                "total_seconds": run.log.total_seconds,
                "relative_total_time": run.log.total_seconds / base_total if base_total > 0 else None,
                "relative_epoch_time": relative_epoch,
            })
        table = pd.DataFrame(rows)
        table.to_csv(out_dir / "freeze_experiment.csv", index=False)
        return table

    @staticmethod
    def online_candidates(
        config: RunConfig, out_dir: str | Path, fraction: float, fractions: tuple[float, ...] = ONLINE_FRACTIONS
    ) -> pd.DataFrame:
        """
        Train on ``fraction`` of the training rows, then grow the candidate store
        with the remaining rows (without retraining) and score the test split at
        every store size in ``fractions``.
        """
        out_dir = Path(out_dir)
        run = ExperimentService.train_run(config, out_dir / "subset", train_fraction=fraction)
        if run.model is None or not run.model.uses_retrieval:
            raise ConfigError("online candidate updates need a retrieval model")
        data, model = run.data, run.model
        test_idx = data.splits["test"]

        remaining = np.setdiff1d(data.splits["train"], run.train_idx)
        remaining = remaining[stream(run.config.train.seed, "subset", 1).permutation(len(remaining))]
        store = CandidateService.build_store(model, data.features[run.train_idx], data.labels[run.train_idx])

        n_train = len(data.splits["train"])
        rows = []
        for target in sorted({fraction, *(f for f in fractions if f > fraction)}):
            wanted = min(n_train, max(store.size, int(round(target * n_train))))
            added = remaining[:wanted - store.size]
            remaining = remaining[len(added):]
            store = CandidateService.add_candidates(store, data.features[added], data.labels[added], model)
            outputs = CandidateService.predict(model, store, data.features[test_idx], run.config.train.eval_batch_size)
            predictions = EvaluationService.outputs_to_predictions(outputs, data.task, data.target_mean, data.target_std)
            metric = EvaluationService.score(predictions, data.targets[test_idx], data.task)
            rows.append({"fraction": target, "store_size": store.size, "test_metric": metric})
            logger.info(f"candidates {store.size}/{n_train}: test {metric_name(data.task)} {metric:.5f}")

        table = pd.DataFrame(rows)
        table.to_csv(out_dir / "online_candidates.csv", index=False)
        CheckpointService.save(out_dir / "subset" / CHECKPOINT_FILE, model, candidate_store=store)
        return table

    @staticmethod
    def analyze_entropy(run_dir: str | Path) -> dict:
        run = ExperimentService.load_run(run_dir)
        value = AnalysisService.attention_entropy(run.model, run.data, candidate_idx=run.train_idx)
        report = {"entropy": value, "uniform": uniform_entropy(len(run.train_idx)), "n_candidates": int(len(run.train_idx))}
        write_summary(Path(run_dir) / "entropy.json", report)
        return report

    @staticmethod
    def analyze_value_projection(run_dir: str | Path, seed: int = 0) -> dict:
        run = ExperimentService.load_run(run_dir)
        if not np.array_equal(run.train_idx, run.data.splits["train"]):
            logger.warning("run was trained on a subset; the ablation retrieves over the full training split")
        report = {
            subspace: AnalysisService.value_projection_ablation(run.model, run.data, subspace, seed=seed)
            for subspace in SUBSPACES
        }
        write_summary(Path(run_dir) / "value_projection.json", report)
        return report


def _seed_job(config: RunConfig, run_dir: Path, seed: int) -> tuple[float, np.ndarray, str]:
    """Worker for one seed; returns only what the parent needs."""
    try:
        outcome = ExperimentService.train_run(config.with_overrides({"train.seed": seed}), run_dir)
    except TabRError as e:
        raise TabRError(f"seed {seed}: {e}") from e
    return outcome.test_metric, outcome.predictions, outcome.data.name
