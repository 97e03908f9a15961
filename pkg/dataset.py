import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# Accepted label spellings, matched case-insensitively after stripping.
LABEL_ENCODINGS = {
    "0": 0, "1": 1,
    "0.0": 0, "1.0": 1,
    "b": 0, "s": 1,
    "benign": 0, "malware": 1,
}


class DatasetError(ValueError):
    """Raised when a dataset or split request violates its contract"""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense feature matrix with binary labels (1 = malware).

    ``row_ids`` are the row positions in the originally loaded dataset and
    travel with every split and projection.
    """
    features: np.ndarray
    labels: np.ndarray
    feature_names: Tuple[str, ...]
    row_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        names = tuple(str(name) for name in self.feature_names)

        if features.ndim != 2:
            raise DatasetError(f"Feature matrix must be 2-D, got shape {features.shape}")
        n_samples, n_features = features.shape
        if len(labels) != n_samples:
            raise DatasetError(
                f"Label count {len(labels)} does not match {n_samples} feature rows"
            )
        if len(names) != n_features:
            raise DatasetError(
                f"{len(names)} feature names given for {n_features} columns"
            )
        if n_features < 1:
            raise DatasetError("Dataset needs at least one feature")
        if n_samples < 2:
            raise DatasetError("Dataset needs at least two samples")
        bad = np.flatnonzero((labels != 0) & (labels != 1))
        if len(bad):
            raise DatasetError(f"Label {labels[bad[0]]} at row {bad[0]} is not 0 or 1")
        positives = int(labels.sum())
        if positives == 0 or positives == n_samples:
            raise DatasetError("Dataset contains a single class")

        row_ids = (
            np.arange(n_samples, dtype=np.int64)
            if self.row_ids is None
            else np.array(self.row_ids, dtype=np.int64).reshape(-1)
        )
        if len(row_ids) != n_samples:
            raise DatasetError("row_ids length does not match the sample count")

        for array in (features, labels, row_ids):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def positives(self) -> int:
        return int(self.labels.sum())

    @property
    def negatives(self) -> int:
        return self.n_samples - self.positives

    def take(self, rows: Sequence[int]) -> "Dataset":
        """Return the dataset restricted to the given row positions"""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            feature_names=self.feature_names,
            row_ids=self.row_ids[rows],
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.row_ids, other.row_ids)
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DatasetError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )
        if self.seed < 0:
            raise DatasetError(f"seed must be non-negative, got {self.seed}")


def _normalize_label(raw: str) -> Optional[int]:
    return LABEL_ENCODINGS.get(str(raw).strip().lower())


def _resolve_label_column(columns: List[str], label_column: Union[str, int]) -> str:
    if isinstance(label_column, int):
        if not -len(columns) <= label_column < len(columns):
            raise DatasetError(
                f"Label column index {label_column} out of range for {len(columns)} columns"
            )
        return columns[label_column]
    if label_column in columns:
        return label_column
    if str(label_column).lstrip("-").isdigit():
        return _resolve_label_column(columns, int(label_column))
    raise DatasetError(f"Label column '{label_column}' not found in header")


def _check_structure(path: Path):
    """Every row carries exactly as many fields as the header; header names are unique"""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"No header row in {path}")
        duplicates = sorted({name for name in header if header.count(name) > 1})
        if duplicates:
            raise DatasetError(f"{path}: duplicate column names {duplicates}")
        for row in reader:
            if row and len(row) != len(header):
                raise DatasetError(
                    f"{path}: line {reader.line_num}: ragged row with {len(row)} fields, "
                    f"header has {len(header)}"
                )


def load_csv(path: Union[str, Path], label_column: Union[str, int]) -> Dataset:
    """Load a headed CSV file, removing the label column from the features.

    Labels are normalized to {0, 1}; accepted spellings are 0/1, B/S and
    benign/malware in any case. Errors name the offending file line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    _check_structure(path)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, index_col=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise DatasetError(f"Ragged rows in {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"No header row in {path}") from e

    columns = [str(c) for c in frame.columns]
    label_name = _resolve_label_column(columns, label_column)
    feature_names = [c for c in columns if c != label_name]

    raw_labels = frame[label_name].tolist()
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for row, raw in enumerate(raw_labels):
        value = _normalize_label(raw)
        if value is None:
            raise DatasetError(
                f"{path}: line {row + 2}: label {raw!r} is not one of "
                f"0/1, B/S, benign/malware"
            )
        labels[row] = value

    features = np.empty((len(frame), len(feature_names)), dtype=np.float64)
    for col, name in enumerate(feature_names):
        raw = frame[name]
        parsed = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if len(bad):
            row = int(bad[0])
            raise DatasetError(
                f"{path}: line {row + 2}, column '{name}': "
                f"value {raw.iloc[row]!r} is not a real number"
            )
        features[:, col] = parsed

    dataset = Dataset(features=features, labels=labels, feature_names=tuple(feature_names))
    logger.info(
        f"Loaded {path.name}: {dataset.n_samples} samples, {dataset.n_features} features, "
        f"{dataset.positives} positives"
    )
    return dataset


def write_csv(d: Dataset, path: Union[str, Path], label_column: str = "class") -> Path:
    """Write a dataset in the layout load_csv reads, label column last"""
    path = Path(path)
    if label_column in d.feature_names:
        raise DatasetError(f"Label column '{label_column}' collides with a feature name")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(d.features, columns=list(d.feature_names))
    frame[label_column] = d.labels
    frame.to_csv(path, index=False)
    return path


def _train_count(n: int, train_fraction: float) -> int:
    return int(math.floor(train_fraction * n + 0.5))


def stratified_split(d: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """Partition rows into (train, validation) deterministically under spec.seed.

    Stratified splits shuffle each class separately and send
    round(train_fraction * class size) rows of it to the train side. Both
    partitions keep the original row order.
    """
    rng = np.random.default_rng(spec.seed)
    train_rows: List[np.ndarray] = []

    if spec.stratified:
        for cls in (0, 1):
            rows = rng.permutation(np.flatnonzero(d.labels == cls))
            n_train = _train_count(len(rows), spec.train_fraction)
            if n_train < 1 or n_train > len(rows) - 1:
                raise DatasetError(
                    f"train_fraction {spec.train_fraction} leaves class {cls} "
                    f"({len(rows)} samples) empty in one partition"
                )
            train_rows.append(rows[:n_train])
    else:
        rows = rng.permutation(d.n_samples)
        train_rows.append(rows[:_train_count(d.n_samples, spec.train_fraction)])

    in_train = np.zeros(d.n_samples, dtype=bool)
    in_train[np.concatenate(train_rows)] = True
    for side, selector in (("train", in_train), ("validation", ~in_train)):
        side_labels = d.labels[selector]
        if side_labels.size == 0 or side_labels.min() == side_labels.max():
            raise DatasetError(
                f"train_fraction {spec.train_fraction} leaves a class empty in the {side} partition"
            )

    return d.take(np.flatnonzero(in_train)), d.take(np.flatnonzero(~in_train))


def project(d: Dataset, mask: Iterable[bool]) -> Dataset:
    """Keep only the columns selected by mask, in their original order"""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if len(mask) != d.n_features:
        raise DatasetError(
            f"Mask length {len(mask)} does not match {d.n_features} features"
        )
    if not mask.any():
        raise DatasetError("Cannot project onto an empty feature mask")
    names = tuple(name for name, keep in zip(d.feature_names, mask) if keep)
    return Dataset(
        features=d.features[:, mask],
        labels=d.labels,
        feature_names=names,
        row_ids=d.row_ids,
    )


def generate_synthetic(
    n_samples: int,
    n_features: int,
    informative: Iterable[int],
    noise_rate: float = 0.0,
    seed: int = 0,
    agreement: float = 0.8,
) -> Dataset:
    """Binary dataset whose label is the majority vote of the informative columns.

    Half the samples (rounded up) are drawn positive. Each informative bit
    agrees with its sample's label with probability ``agreement``; draws whose
    majority disagrees with the label, or ties for an even informative count,
    are redrawn, so the construction is symmetric under complementing bits and
    label. Non-informative bits are fair coins. ``noise_rate`` then flips each
    label independently.
    """
    informative = sorted(set(int(i) for i in informative))
    if not informative:
        raise DatasetError("At least one informative feature is required")
    if n_samples < 4:
        raise DatasetError(f"n_samples must be at least 4, got {n_samples}")
    if n_features < 1:
        raise DatasetError(f"n_features must be at least 1, got {n_features}")
    invalid = [i for i in informative if not 0 <= i < n_features]
    if invalid:
        raise DatasetError(f"Informative indices {invalid} outside [0, {n_features})")
    if not 0.0 <= noise_rate < 0.5:
        raise DatasetError(f"noise_rate must lie in [0, 0.5), got {noise_rate}")
    if not 0.5 < agreement <= 1.0:
        raise DatasetError(f"agreement must lie in (0.5, 1], got {agreement}")

    rng = np.random.default_rng(seed)
    k = len(informative)
    labels = np.zeros(n_samples, dtype=np.int64)
    labels[: (n_samples + 1) // 2] = 1
    labels = rng.permutation(labels)

    features = rng.integers(0, 2, size=(n_samples, n_features)).astype(np.float64)
    for row in range(n_samples):
        while True:
            agrees = rng.random(k) < agreement
            if 2 * agrees.sum() > k:
                break
        bits = np.where(agrees, labels[row], 1 - labels[row])
        features[row, informative] = bits

    if noise_rate > 0:
        flips = rng.random(n_samples) < noise_rate
        labels = np.where(flips, 1 - labels, labels)

    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(f"f{i}" for i in range(n_features)),
    )


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 of a data file, recorded with experiment results"""
    sha256_hash = hashlib.sha256()
    with open(path, "rb") as f:
        for byte_block in iter(lambda: f.read(4096), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()
