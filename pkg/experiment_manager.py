import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import psutil

from abc_optimizer import ABCOptimizer, ColonyConfig, RunResult
from classifier import ClassifierError, FitnessEvaluator, FitnessProtocol, SvmHyperparams, train_model
from dataset import Dataset, DatasetError, SplitSpec, file_digest, load_csv, project, stratified_split
from metrics import REFERENCE_RESULTS, REPORT_DECIMALS, MetricsReport, evaluate

SCHEMA_VERSION = 1
DEFAULT_CONFIG_FILE = Path("config/experiment.json")

DEFAULT_CONFIG = {
    "data": {
        "path": None,
        "label_column": "class",
    },
    "colony": {
        "population_size": 20,
        "limit": 10,
        "lower_bound": 1,
        "upper_bound": None,
        "max_iterations": 100,
        "seed": 0,
        "stall_iterations": None,
    },
    "fitness": {
        "evaluator": "svm",
        "train_fraction": 0.7,
        "stratified": True,
        "split_seed": 0,
        "svm_c": 1e-4,
        "svm_epochs": 30,
        "svm_lr": 1.0,
        "svm_batch": 32,
        "svm_seed": 0,
    },
    "experiment": {
        "sweep_sizes": None,
        "test_fraction": 0.2,
        "split_seed": 0,
        "output_path": "results",
        "baseline_accuracy": None,
        "workers": 1,
        "include_reference_rows": True,
    },
}

logger = logging.getLogger(__name__)


class ConfigValidationError(ValueError):
    """Raised with every violation found in an experiment configuration"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SweepError(RuntimeError):
    """A sweep entry failed; ``size`` names the entry"""

    def __init__(self, size: int, cause: Exception):
        self.size = size
        super().__init__(f"Sweep size {size} failed: {type(cause).__name__}: {cause}")


class LeakageError(RuntimeError):
    """Final test rows appeared in the fitness-evaluation data"""


def load_config(path: Optional[Union[str, Path]] = None) -> dict:
    """Load experiment configuration, section by section over the defaults.

    Without an explicit path the default file is optional; an explicit path
    that cannot be read is an error.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    config_file = Path(path) if path is not None else DEFAULT_CONFIG_FILE
    try:
        with open(config_file, "r") as f:
            loaded = json.load(f)
    except FileNotFoundError:
        if path is not None:
            raise
        logger.warning(f"Config file {config_file} not found, using built-in defaults")
        return config
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"{config_file}: invalid JSON: {e}"]) from e

    for section, values in loaded.items():
        if section not in config or not isinstance(values, dict):
            logger.warning(f"Ignoring unknown config section '{section}' in {config_file}")
            continue
        unknown = set(values) - set(config[section])
        if unknown:
            logger.warning(f"Ignoring unknown keys {sorted(unknown)} in section '{section}'")
        config[section] = {**config[section], **{k: v for k, v in values.items() if k not in unknown}}
    return config


def resolve_workers(workers: int) -> int:
    """0 means one worker per physical core"""
    if workers == 0:
        return psutil.cpu_count(logical=False) or 1
    return workers


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: Optional[str]
    label_column: str = "class"
    colony: ColonyConfig = field(default_factory=ColonyConfig)
    protocol: FitnessProtocol = field(default_factory=FitnessProtocol)
    sweep_sizes: Optional[Tuple[int, ...]] = None
    final_test_fraction: float = 0.2
    output_path: str = "results"
    baseline_accuracy: Optional[float] = None
    split_seed: int = 0
    workers: int = 1
    include_reference_rows: bool = True

    @classmethod
    def from_dict(cls, sections: dict) -> "ExperimentConfig":
        """Build from the sectioned layout of config/experiment.json.

        Construction errors from every section are collected before raising.
        """
        merged = copy.deepcopy(DEFAULT_CONFIG)
        for section, values in sections.items():
            merged.setdefault(section, {}).update(values or {})
        data, col, fit, exp = (merged[s] for s in ("data", "colony", "fitness", "experiment"))

        problems = []
        colony = protocol = None
        try:
            colony = ColonyConfig(**col)
        except TypeError as e:
            problems.append(f"colony: {e}")
        try:
            protocol = FitnessProtocol(
                split=SplitSpec(
                    train_fraction=fit["train_fraction"],
                    stratified=bool(fit["stratified"]),
                    seed=fit["split_seed"],
                ),
                evaluator_kind=fit["evaluator"],
                svm_params=SvmHyperparams(
                    regularization_strength=fit["svm_c"],
                    epochs=fit["svm_epochs"],
                    learning_rate_scale=fit["svm_lr"],
                    batch_size=fit["svm_batch"],
                    seed=fit["svm_seed"],
                ),
            )
        except (DatasetError, ClassifierError) as e:
            problems.append(f"fitness: {e}")
        if problems:
            raise ConfigValidationError(problems)

        sizes = exp["sweep_sizes"]
        return cls(
            data_path=data["path"],
            label_column=str(data["label_column"]),
            colony=colony,
            protocol=protocol,
            sweep_sizes=None if sizes is None else tuple(int(s) for s in sizes),
            final_test_fraction=exp["test_fraction"],
            output_path=str(exp["output_path"]),
            baseline_accuracy=exp["baseline_accuracy"],
            split_seed=exp["split_seed"],
            workers=exp["workers"],
            include_reference_rows=bool(exp["include_reference_rows"]),
        )

    def to_dict(self) -> dict:
        svm = self.protocol.svm_params
        return {
            "data": {"path": self.data_path, "label_column": self.label_column},
            "colony": {
                "population_size": self.colony.population_size,
                "limit": self.colony.limit,
                "lower_bound": self.colony.lower_bound,
                "upper_bound": self.colony.upper_bound,
                "max_iterations": self.colony.max_iterations,
                "seed": self.colony.seed,
                "stall_iterations": self.colony.stall_iterations,
            },
            "fitness": {
                "evaluator": self.protocol.evaluator_kind,
                "train_fraction": self.protocol.split.train_fraction,
                "stratified": self.protocol.split.stratified,
                "split_seed": self.protocol.split.seed,
                "svm_c": svm.regularization_strength,
                "svm_epochs": svm.epochs,
                "svm_lr": svm.learning_rate_scale,
                "svm_batch": svm.batch_size,
                "svm_seed": svm.seed,
            },
            "experiment": {
                "sweep_sizes": None if self.sweep_sizes is None else list(self.sweep_sizes),
                "test_fraction": self.final_test_fraction,
                "split_seed": self.split_seed,
                "output_path": self.output_path,
                "baseline_accuracy": self.baseline_accuracy,
                "workers": self.workers,
                "include_reference_rows": self.include_reference_rows,
            },
        }

    def sweep_entry(self, size: int) -> "ExperimentConfig":
        """Single-run config for one sweep size: bounds (size, size), seed base + size"""
        colony = replace(self.colony, lower_bound=size, upper_bound=size, seed=self.colony.seed + size)
        return replace(self, colony=colony, sweep_sizes=None)

    def violations(self, n_features: int) -> List[str]:
        problems = []
        if not 0.0 < self.final_test_fraction < 1.0:
            problems.append(f"test_fraction must lie in (0, 1), got {self.final_test_fraction}")
        if self.split_seed < 0:
            problems.append(f"split_seed must be non-negative, got {self.split_seed}")
        if self.workers < 0:
            problems.append(f"workers must be non-negative, got {self.workers}")
        if self.baseline_accuracy is not None and not 0.0 <= self.baseline_accuracy <= 1.0:
            problems.append(f"baseline_accuracy must lie in [0, 1], got {self.baseline_accuracy}")

        if self.sweep_sizes is None:
            problems.extend(f"colony: {p}" for p in self.colony.violations(n_features))
            return problems

        if not self.sweep_sizes:
            problems.append("sweep_sizes is empty")
        if len(set(self.sweep_sizes)) != len(self.sweep_sizes):
            problems.append(f"sweep_sizes must be distinct, got {list(self.sweep_sizes)}")
        for size in self.sweep_sizes:
            if not 1 <= size <= n_features:
                problems.append(f"sweep size {size} outside [1, {n_features}]")
                continue
            problems.extend(
                f"sweep size {size}: colony: {p}"
                for p in self.sweep_entry(size).colony.violations(n_features)
            )
        return problems

    def check(self, n_features: int):
        problems = self.violations(n_features)
        if problems:
            raise ConfigValidationError(problems)


@dataclass
class SingleRunOutcome:
    """One ABC search plus its held-out evaluation.

    Unpacks as ``(run, report)``.
    """
    config: ExperimentConfig
    run: RunResult
    report: MetricsReport
    selected_features: List[str]
    full_feature_fitness: float
    full_feature_report: MetricsReport
    test_samples: int
    fitness_samples: Tuple[int, int]
    data_sha256: Optional[str] = None

    def __iter__(self) -> Iterator:
        return iter((self.run, self.report))


@dataclass
class SweepEntry:
    size: int
    seed: int
    outcome: SingleRunOutcome


@dataclass
class SweepResult:
    config: ExperimentConfig
    entries: List[SweepEntry]
    chosen_size: int
    data_sha256: Optional[str] = None

    def entry(self, size: int) -> SweepEntry:
        return next(e for e in self.entries if e.size == size)


def _load(config: ExperimentConfig) -> Tuple[Dataset, str]:
    if config.data_path is None:
        raise ConfigValidationError(["data path is required"])
    dataset = load_csv(config.data_path, config.label_column)
    return dataset, file_digest(config.data_path)


def _holdout_report(remainder: Dataset, test: Dataset, mask: np.ndarray, protocol: FitnessProtocol) -> MetricsReport:
    model = train_model(project(remainder, mask), protocol)
    projected = project(test, mask)
    return evaluate(model.predict_many(projected.features), projected.labels)


def _assert_disjoint(test_ids: np.ndarray, *fitness_ids: np.ndarray):
    for ids in fitness_ids:
        overlap = np.intersect1d(test_ids, ids)
        if overlap.size:
            raise LeakageError(
                f"{overlap.size} final test rows appear in fitness data, e.g. row {overlap[0]}"
            )


def run_single(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> SingleRunOutcome:
    """Hold out a final test partition, run ABC on the rest and report on the holdout"""
    d, digest = (dataset, None) if dataset is not None else _load(config)
    config.check(d.n_features)

    remainder, test = stratified_split(
        d, SplitSpec(train_fraction=1.0 - config.final_test_fraction, stratified=True, seed=config.split_seed)
    )
    evaluator = FitnessEvaluator(remainder, config.protocol, workers=resolve_workers(config.workers))
    fit_train_ids, fit_validation_ids = evaluator.split_row_ids()
    _assert_disjoint(test.row_ids, fit_train_ids, fit_validation_ids)

    logger.info(
        f"Running ABC on {remainder.n_samples} samples "
        f"(final test {test.n_samples}), bounds {config.colony.bounds(d.n_features)}"
    )
    result = ABCOptimizer(config.colony, d.n_features, evaluator).run()

    everything = np.ones(d.n_features, dtype=bool)
    outcome = SingleRunOutcome(
        config=config,
        run=result,
        report=_holdout_report(remainder, test, result.best_mask, config.protocol),
        selected_features=[d.feature_names[i] for i in result.selected],
        full_feature_fitness=evaluator(everything),
        full_feature_report=_holdout_report(remainder, test, everything, config.protocol),
        test_samples=test.n_samples,
        fitness_samples=(len(fit_train_ids), len(fit_validation_ids)),
        data_sha256=digest,
    )
    logger.info(
        f"Held-out accuracy {outcome.report.accuracy:.4f} with {len(result.selected)} features "
        f"(all features: {outcome.full_feature_report.accuracy:.4f})"
    )
    return outcome


def choose_size(accuracies: Dict[int, float]) -> int:
    """Size with the highest accuracy; the smallest size wins ties"""
    best_size = None
    for size in sorted(accuracies):
        if best_size is None or accuracies[size] > accuracies[best_size]:
            best_size = size
    return best_size


def run_sweep(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> SweepResult:
    """One run_single per sweep size with bounds (k, k) and seed base + k"""
    if not config.sweep_sizes:
        raise ConfigValidationError(["sweep_sizes must be given for a sweep"])
    d, digest = (dataset, None) if dataset is not None else _load(config)
    config.check(d.n_features)
    sizes = sorted(config.sweep_sizes)
    workers = resolve_workers(config.workers)

    def run_entry(size: int) -> SweepEntry:
        entry_config = config.sweep_entry(size)
        if workers > 1:
            entry_config = replace(entry_config, workers=1)
        try:
            outcome = run_single(entry_config, d)
        except Exception as e:
            raise SweepError(size, e) from e
        logger.info(f"Sweep size {size}: held-out accuracy {outcome.report.accuracy:.4f}")
        return SweepEntry(size=size, seed=entry_config.colony.seed, outcome=outcome)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            entries = list(executor.map(run_entry, sizes))
    else:
        entries = [run_entry(size) for size in sizes]

    chosen = choose_size({e.size: e.outcome.report.accuracy for e in entries})
    logger.info(f"Sweep chose {chosen} features")
    return SweepResult(config=config, entries=entries, chosen_size=chosen, data_sha256=digest)


def _rounded(value: float) -> float:
    return round(value, REPORT_DECIMALS)


def _entry_record(size: int, seed: int, outcome: SingleRunOutcome) -> dict:
    return {
        "size": size,
        "seed": seed,
        "run": outcome.run.to_dict(),
        "selected_features": outcome.selected_features,
        "test_metrics": outcome.report.to_dict(),
        "full_feature_fitness": outcome.full_feature_fitness,
        "full_feature_test_metrics": outcome.full_feature_report.to_dict(),
        "test_samples": outcome.test_samples,
        "fitness_train_samples": outcome.fitness_samples[0],
        "fitness_validation_samples": outcome.fitness_samples[1],
    }


def _write(path: Path, writer):
    try:
        writer(path)
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e
    logger.info(f"Wrote {path}")


def emit_results(result: Union[SweepResult, SingleRunOutcome], path: Union[str, Path]) -> List[Path]:
    """Write results.json, sweep.csv and report.csv into directory path.

    Output depends only on the result, so identical runs give identical bytes.
    """
    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {out_dir}: {e}") from e

    if isinstance(result, SweepResult):
        config = result.config
        entries = [(e.size, e.seed, e.outcome) for e in result.entries]
        chosen_size = result.chosen_size
        mode = "sweep"
    else:
        config = result.config
        size = len(result.run.selected)
        entries = [(size, config.colony.seed, result)]
        chosen_size = size
        mode = "single"
    digest = result.data_sha256

    document = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "config": config.to_dict(),
        "data_sha256": digest,
        "chosen_size": chosen_size,
        "entries": [_entry_record(*entry) for entry in entries],
    }

    def write_json(target: Path):
        with open(target, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")

    sweep = pd.DataFrame(
        {
            "size": [size for size, _, _ in entries],
            "accuracy": [_rounded(o.report.accuracy) for _, _, o in entries],
            "baseline_accuracy": [config.baseline_accuracy for _ in entries],
            "fitness": [_rounded(o.run.best_fitness) for _, _, o in entries],
            "full_feature_accuracy": [_rounded(o.full_feature_report.accuracy) for _, _, o in entries],
        }
    )

    evaluator_name = config.protocol.evaluator_kind.upper()
    rows = list(REFERENCE_RESULTS) if config.include_reference_rows else []
    chosen = next(o for size, _, o in entries if size == chosen_size)
    for approach, report in (
        (f"ABC+{evaluator_name} (this run, {chosen_size} features)", chosen.report),
        (f"{evaluator_name}, all features (this run)", chosen.full_feature_report),
    ):
        metrics = report.to_dict()
        rows.append(
            {
                "approach": approach,
                "recall": metrics["recall"],
                "specificity": metrics["specificity"],
                "accuracy": metrics["accuracy"],
                "unit": "fraction",
                "note": "held-out test partition",
            }
        )
    report = pd.DataFrame(rows, columns=["approach", "recall", "specificity", "accuracy", "unit", "note"])

    written = []
    for name, writer in (
        ("results.json", write_json),
        ("sweep.csv", lambda target: sweep.to_csv(target, index=False, lineterminator="\n")),
        ("report.csv", lambda target: report.to_csv(target, index=False, lineterminator="\n")),
    ):
        target = out_dir / name
        _write(target, writer)
        written.append(target)
    return written
