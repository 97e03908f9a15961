import argparse
import json
import logging
import os
import sys
from datetime import datetime
from typing import Dict, List, Optional, Tuple

from abc_optimizer import ColonyConfigError
from classifier import ClassifierError
from dataset import DatasetError
from experiment_manager import (
    ConfigValidationError,
    ExperimentConfig,
    emit_results,
    load_config,
    run_single,
    run_sweep,
)
from metrics import MetricsError

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

CONFIG_ERRORS = (ConfigValidationError, ColonyConfigError, DatasetError, ClassifierError, MetricsError)

# CLI flag destination -> (config section, key)
FLAG_FIELDS: Dict[str, Tuple[str, str]] = {
    "data": ("data", "path"),
    "label_col": ("data", "label_column"),
    "pop_size": ("colony", "population_size"),
    "limit": ("colony", "limit"),
    "lower": ("colony", "lower_bound"),
    "upper": ("colony", "upper_bound"),
    "max_iter": ("colony", "max_iterations"),
    "seed": ("colony", "seed"),
    "stall": ("colony", "stall_iterations"),
    "fitness": ("fitness", "evaluator"),
    "train_frac": ("fitness", "train_fraction"),
    "svm_c": ("fitness", "svm_c"),
    "svm_epochs": ("fitness", "svm_epochs"),
    "svm_lr": ("fitness", "svm_lr"),
    "svm_batch": ("fitness", "svm_batch"),
    "sweep": ("experiment", "sweep_sizes"),
    "test_frac": ("experiment", "test_fraction"),
    "split_seed": ("experiment", "split_seed"),
    "out": ("experiment", "output_path"),
    "baseline_acc": ("experiment", "baseline_accuracy"),
    "workers": ("experiment", "workers"),
}


def setup_logging(level: str = "INFO", log_dir: str = "logs"):
    """Setup logging to a dated file and stderr"""
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f'abc_fs_{datetime.now().strftime("%Y%m%d")}.log')

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stderr)
        ]
    )


def parse_sizes(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sweep expects a comma list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abc-fs",
        description="Artificial bee colony wrapper feature selection with a linear SVM fitness",
    )
    parser.add_argument("--config", help="JSON config file (default: config/experiment.json)")
    parser.add_argument("--data", help="CSV dataset with a header row")
    parser.add_argument("--label-col", help="Label column name or index")

    colony = parser.add_argument_group("colony")
    colony.add_argument("--pop-size", type=int, help="Number of food sources")
    colony.add_argument("--limit", type=int, help="Failed trials before a source is abandoned")
    colony.add_argument("--lower", type=int, help="Minimum selected features")
    colony.add_argument("--upper", type=int, help="Maximum selected features")
    colony.add_argument("--max-iter", type=int, help="Colony iterations")
    colony.add_argument("--seed", type=int, help="Colony RNG seed")
    colony.add_argument("--stall", type=int, help="Stop after this many iterations without improvement")

    fitness = parser.add_argument_group("fitness")
    fitness.add_argument("--fitness", choices=["svm", "centroid"], help="Fitness evaluator")
    fitness.add_argument("--train-frac", type=float, help="Train share of the fitness split")
    fitness.add_argument("--svm-c", type=float, help="SVM regularization strength (lambda)")
    fitness.add_argument("--svm-epochs", type=int, help="SVM training epochs")
    fitness.add_argument("--svm-lr", type=float, help="SVM learning-rate scale")
    fitness.add_argument("--svm-batch", type=int, help="SVM mini-batch size")

    experiment = parser.add_argument_group("experiment")
    experiment.add_argument("--sweep", type=parse_sizes, help="Comma list of subset sizes")
    experiment.add_argument("--test-frac", type=float, help="Final held-out test share")
    experiment.add_argument("--split-seed", type=int, help="Seed of the final test split")
    experiment.add_argument("--out", help="Output directory")
    experiment.add_argument("--baseline-acc", type=float, help="Reference accuracy line for sweep.csv")
    experiment.add_argument("--workers", type=int, help="Worker threads, 0 for one per core")

    parser.add_argument("--log-level", default="INFO", help="Logging level")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file values overridden by every flag that was given"""
    sections = load_config(args.config)
    for dest, (section, key) in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            sections[section][key] = value
    return ExperimentConfig.from_dict(sections)


def report_error(error: Exception):
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger = logging.getLogger('abc_fs')

    try:
        config = config_from_args(args)
        if config.sweep_sizes:
            result = run_sweep(config)
            summary = f"chosen size {result.chosen_size}, held-out accuracy " \
                      f"{result.entry(result.chosen_size).outcome.report.accuracy:.4f}"
        else:
            result = run_single(config)
            summary = f"{len(result.run.selected)} features, held-out accuracy " \
                      f"{result.report.accuracy:.4f}"
        written = emit_results(result, config.output_path)
    except CONFIG_ERRORS as e:
        logger.error(f"Invalid configuration or data: {e}")
        report_error(e)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception(f"Experiment failed: {e}")
        report_error(e)
        return EXIT_FAILURE

    print(f"{summary}; wrote {', '.join(str(p) for p in written)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
