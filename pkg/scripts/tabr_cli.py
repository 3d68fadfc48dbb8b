#!/usr/bin/env python3
"""
Command-line entry point for training, evaluation and the experiments.

Examples:
    python scripts/tabr_cli.py train --config tabr_s_ca.cfg --seed 0
    python scripts/tabr_cli.py ablation-ladder --dataset CA --seeds 15
    python scripts/tabr_cli.py freeze-experiment --config tabr_s_ca.cfg --freeze-epochs 0,1,2,4,8
    python scripts/tabr_cli.py grad-check
"""
import argparse
import os
import sys
from pathlib import Path

# Add the parent directory to the Python path so the packages import
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.presets import load_run_config, preset_config  # noqa: E402
from config.run_config import RunConfig  # noqa: E402
from config.settings import configure_logging  # noqa: E402
from services.diagnostics_service import GRAD_CHECK_TOLERANCE, DiagnosticsService  # noqa: E402
from services.errors import ConfigError, TabRError  # noqa: E402
from services.experiment_service import ExperimentService  # noqa: E402

COMMANDS = (
    "train",
    "evaluate",
    "ensemble-eval",
    "ablation-ladder",
    "freeze-experiment",
    "add-candidates",
    "analyze-entropy",
    "analyze-value-projection",
    "knn",
    "grad-check",
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config file, or the name of a bundled preset")
    common.add_argument("--dataset", help="Dataset directory, or a name under TABR_DATA_DIR")
    common.add_argument("--seed", type=int, help="Run seed")
    common.add_argument("--out", help="Output (run) directory")
    common.add_argument("--max-epochs", type=int, help="Upper bound on training epochs")
    common.add_argument("--jobs", type=int, default=1, help="Seeds trained in parallel processes")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Extra config override (repeatable)")
    common.add_argument("--log-level", help="Logging level (default from TABR_LOG_LEVEL)")

    parser = argparse.ArgumentParser(description="TabR retrieval-augmented tabular models")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, parents=[common])
        if command == "ablation-ladder":
            p.add_argument("--seeds", type=int, help="Seeds per variant (default eval.seeds)")
            p.add_argument("--grid", action="store_true", help="Run the eight similarity/value combinations")
        elif command == "freeze-experiment":
            p.add_argument("--freeze-epochs", default="0,1,2,4,8", help="Comma-separated freeze epochs")
        elif command == "add-candidates":
            p.add_argument("--candidates-fraction", type=float, default=0.1,
                           help="Fraction of training rows used for training")
        elif command in ("evaluate", "analyze-entropy", "analyze-value-projection"):
            p.add_argument("--run", help="Run directory to load (defaults to --out)")
        elif command == "knn":
            p.add_argument("--k", type=int, help="Number of neighbors")
    return parser


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got '{pair}'")
        overrides[key.strip()] = value.strip()
    return overrides


def build_config(args: argparse.Namespace) -> RunConfig:
    """Config file or preset, then --dataset/--seed/--max-epochs/--set on top."""
    if args.config:
        config = load_run_config(args.config)
    else:
        config = preset_config("knn" if args.command == "knn" else "tabr-s")
    overrides: dict[str, object] = {}
    if args.command == "knn":
        overrides["model.kind"] = "knn"
        if args.k is not None:
            overrides["model.knn_k"] = args.k
    if args.dataset:
        overrides["data.dir"] = args.dataset
        overrides["data.name"] = Path(args.dataset).name
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    if args.max_epochs is not None:
        overrides["train.max_epochs"] = args.max_epochs
    overrides.update(parse_overrides(args.set))
    return config.with_overrides(overrides) if overrides else config


def output_dir(args: argparse.Namespace) -> Path:
    return Path(args.out) if args.out else Path("runs") / args.command


def run_command(args: argparse.Namespace) -> int:
    command = args.command

    if command == "grad-check":
        errors = DiagnosticsService.grad_check_suite(seed=args.seed or 0)
        for name, error in errors.items():
            flag = "✅" if error <= GRAD_CHECK_TOLERANCE else "❌"
            print(f"{flag} {name:<36} {error:.3e}")
        worst = max(errors.values())
        print(f"max relative error: {worst:.3e}")
        return 0 if worst <= GRAD_CHECK_TOLERANCE else 1

    if command in ("evaluate", "analyze-entropy", "analyze-value-projection"):
        run_dir = Path(args.run) if args.run else output_dir(args)
        print(f"📁 Loading run {run_dir}")
        if command == "evaluate":
            print(f"✅ test metric: {ExperimentService.evaluate_run(run_dir):.5f}")
        elif command == "analyze-entropy":
            report = ExperimentService.analyze_entropy(run_dir)
            print(f"✅ entropy {report['entropy']:.4f} (uniform over {report['n_candidates']}: {report['uniform']:.4f})")
        else:
            report = ExperimentService.analyze_value_projection(run_dir, seed=args.seed or 0)
            for subspace, metric in report.items():
                print(f"✅ removed {subspace:<12} {metric:.5f}")
        return 0

    config = build_config(args)
    out = output_dir(args)
    print(f"🚀 {command} → {out}")

    if command in ("train", "knn"):
        outcome = ExperimentService.train_run(config, out)
        print(f"✅ test metric: {outcome.test_metric:.5f}")
    elif command == "ensemble-eval":
        report = ExperimentService.ensemble_eval(config, out, jobs=args.jobs)
        print(f"✅ single {report['single_mean']:.5f} ± {report['single_std']:.5f}, ensemble {report['ensemble']:.5f}")
    elif command == "ablation-ladder":
        results = ExperimentService.ablation(config, out, args.seeds or config.eval.seeds, grid=args.grid, jobs=args.jobs)
        for result in results:
            print(f"✅ {result.algorithm:<32} {result.mean:.5f} ± {result.std:.5f}")
    elif command == "freeze-experiment":
        try:
            epochs = [int(part) for part in args.freeze_epochs.split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"--freeze-epochs must be comma-separated integers, got '{args.freeze_epochs}'") from None
        table = ExperimentService.freeze_experiment(config, out, epochs)
        print(table.to_string(index=False))
    elif command == "add-candidates":
        table = ExperimentService.online_candidates(config, out, args.candidates_fraction)
        print(table.to_string(index=False))
    print(f"📁 Artifacts in {out}")
    return 0


def dispatch(argv: list[str] | None = None) -> int:
    """Parse ``argv``, run the subcommand and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)
    try:
        return run_command(args)
    except TabRError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(dispatch())
