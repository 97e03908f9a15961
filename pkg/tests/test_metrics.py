import numpy as np
import pytest

from metrics import (
    REFERENCE_RESULTS,
    ConfusionMatrix,
    MetricsError,
    MetricsReport,
    UndefinedMetricError,
    accuracy,
    confusion,
    recall,
    specificity,
)


def test_confusion_counts():
    assert confusion([1, 1, 0, 0], [1, 0, 0, 1]) == ConfusionMatrix(tp=1, fp=1, tn=1, fn=1)


def test_confusion_identity():
    labels = [1, 1, 1, 0, 0]
    assert confusion(labels, labels) == ConfusionMatrix(tp=3, fp=0, tn=2, fn=0)


def test_confusion_matches_recount():
    rng = np.random.default_rng(0)
    predicted = rng.integers(0, 2, size=1000)
    actual = rng.integers(0, 2, size=1000)
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, a in zip(predicted, actual):
        key = ("t" if p == a else "f") + ("p" if p == 1 else "n")
        counts[key] += 1
    cm = confusion(predicted, actual)
    assert cm == ConfusionMatrix(**counts)
    assert cm.total == 1000


@pytest.mark.parametrize(
    "predicted,actual",
    [([1, 0], [1]), ([1, 2], [1, 0]), ([], [])],
)
def test_confusion_rejects_bad_vectors(predicted, actual):
    with pytest.raises(MetricsError):
        confusion(predicted, actual)


def test_negative_count_rejected():
    with pytest.raises(MetricsError):
        ConfusionMatrix(tp=-1, fp=0, tn=0, fn=0)


@pytest.mark.parametrize(
    "cm,expected",
    [
        (ConfusionMatrix(tp=50, fp=5, tn=40, fn=5), 0.90),
        (ConfusionMatrix(tp=0, fp=0, tn=10, fn=0), 1.0),
    ],
)
def test_accuracy(cm, expected):
    assert accuracy(cm) == pytest.approx(expected)


@pytest.mark.parametrize("tp,fn,expected", [(90, 10, 0.90), (0, 5, 0.0)])
def test_recall(tp, fn, expected):
    assert recall(ConfusionMatrix(tp=tp, fp=0, tn=0, fn=fn)) == pytest.approx(expected)


@pytest.mark.parametrize("tn,fp,expected", [(99, 1, 0.99), (0, 3, 0.0)])
def test_specificity(tn, fp, expected):
    assert specificity(ConfusionMatrix(tp=0, fp=fp, tn=tn, fn=0)) == pytest.approx(expected)


def test_zero_denominators_raise():
    with pytest.raises(UndefinedMetricError):
        accuracy(ConfusionMatrix(0, 0, 0, 0))
    with pytest.raises(UndefinedMetricError):
        recall(ConfusionMatrix(tp=0, fp=3, tn=4, fn=0))
    with pytest.raises(UndefinedMetricError):
        specificity(ConfusionMatrix(tp=3, fp=0, tn=0, fn=4))


def test_formulas_against_recount_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        tp, fp, tn, fn = (int(x) for x in rng.integers(1, 500, size=4))
        cm = ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
        positives, negatives = tp + fn, tn + fp
        assert abs(accuracy(cm) - (tp + tn) / (positives + negatives)) <= 1e-12
        assert abs(recall(cm) - tp / positives) <= 1e-12
        assert abs(specificity(cm) - tn / negatives) <= 1e-12
        weighted = (recall(cm) * positives + specificity(cm) * negatives) / (positives + negatives)
        assert abs(accuracy(cm) - weighted) <= 1e-12
        for value in (accuracy(cm), recall(cm), specificity(cm)):
            assert 0.0 <= value <= 1.0


def test_swapping_positive_class_swaps_recall_and_specificity():
    cm = ConfusionMatrix(tp=12, fp=3, tn=40, fn=7)
    assert recall(cm.swapped()) == specificity(cm)
    assert specificity(cm.swapped()) == recall(cm)
    assert accuracy(cm.swapped()) == accuracy(cm)


def test_report_rounds_only_at_serialization():
    report = MetricsReport(accuracy=0.991834, recall=0.98897, specificity=0.994612)
    assert report.to_dict() == {"accuracy": 0.9918, "recall": 0.989, "specificity": 0.9946}
    assert report.to_dict(decimals=None)["accuracy"] == 0.991834


def test_reference_rows_are_verbatim():
    published = {row["approach"]: row for row in REFERENCE_RESULTS}
    ours = published["ABC+SVM (published)"]
    assert (ours["recall"], ours["specificity"], ours["accuracy"]) == ("98.9", "99.46", "99.18")
    droidfusion = published["DroidFusion (J48)"]
    assert droidfusion["specificity"] == "998.9"
    assert "typo" in droidfusion["note"]
