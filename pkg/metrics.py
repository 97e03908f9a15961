from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

REPORT_DECIMALS = 4

# Published comparison rows, kept verbatim in percent. Never used in arithmetic.
REFERENCE_RESULTS: List[Dict[str, Optional[str]]] = [
    {
        "approach": "DroidFusion (J48)",
        "recall": "98.4",
        "specificity": "998.9",
        "accuracy": "98.6",
        "unit": "percent",
        "note": "published value; specificity printed as 998.9, likely a typo for 98.9",
    },
    {
        "approach": "ABC+SVM (published)",
        "recall": "98.9",
        "specificity": "99.46",
        "accuracy": "99.18",
        "unit": "percent",
        "note": "published value",
    },
]


class MetricsError(ValueError):
    """Raised for malformed label vectors or confusion matrices"""


class UndefinedMetricError(MetricsError):
    """Raised when a metric's denominator is zero"""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise MetricsError(f"{name} must be a non-negative count, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def swapped(self) -> "ConfusionMatrix":
        """Same counts under the opposite positive-class convention"""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


def _as_labels(values: Sequence[int], name: str) -> np.ndarray:
    array = np.asarray(values).reshape(-1)
    if array.size and not np.isin(array, (0, 1)).all():
        bad = array[~np.isin(array, (0, 1))][0]
        raise MetricsError(f"{name} contains label {bad!r}; only 0 and 1 are allowed")
    return array.astype(np.int64)


def confusion(predicted: Sequence[int], actual: Sequence[int]) -> ConfusionMatrix:
    """Count (predicted, actual) pairs with 1 as the positive (malware) class"""
    predicted = _as_labels(predicted, "predicted")
    actual = _as_labels(actual, "actual")
    if len(predicted) != len(actual):
        raise MetricsError(
            f"Length mismatch: {len(predicted)} predictions for {len(actual)} labels"
        )
    if len(actual) == 0:
        raise MetricsError("Cannot build a confusion matrix from empty vectors")
    return ConfusionMatrix(
        tp=int(np.count_nonzero((predicted == 1) & (actual == 1))),
        fp=int(np.count_nonzero((predicted == 1) & (actual == 0))),
        tn=int(np.count_nonzero((predicted == 0) & (actual == 0))),
        fn=int(np.count_nonzero((predicted == 0) & (actual == 1))),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    """(TP + TN) / (TP + FP + TN + FN)"""
    if cm.total == 0:
        raise UndefinedMetricError("Accuracy is undefined for an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def recall(cm: ConfusionMatrix) -> float:
    """TP / (TP + FN), the detected fraction of malware"""
    if cm.positives == 0:
        raise UndefinedMetricError("Recall is undefined without positive samples")
    return cm.tp / cm.positives


def specificity(cm: ConfusionMatrix) -> float:
    """TN / (TN + FP), the correctly passed fraction of benign samples"""
    if cm.negatives == 0:
        raise UndefinedMetricError("Specificity is undefined without negative samples")
    return cm.tn / cm.negatives


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    recall: float
    specificity: float

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix) -> "MetricsReport":
        return cls(
            accuracy=accuracy(cm),
            recall=recall(cm),
            specificity=specificity(cm),
        )

    def to_dict(self, decimals: Optional[int] = REPORT_DECIMALS) -> Dict[str, float]:
        values = {
            "accuracy": self.accuracy,
            "recall": self.recall,
            "specificity": self.specificity,
        }
        if decimals is None:
            return values
        return {key: round(value, decimals) for key, value in values.items()}


def evaluate(predicted: Sequence[int], actual: Sequence[int]) -> MetricsReport:
    return MetricsReport.from_confusion(confusion(predicted, actual))
