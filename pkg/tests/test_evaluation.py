import numpy as np
import pytest

from src.domain.errors import InsufficientClassCount, LengthMismatch, SingleClassInput
from src.domain.evaluation import (
    compute_metrics,
    confusion,
    confusion_by_group,
    holdout_split,
    roc_auc,
    roc_points,
    score_report,
)
from src.domain.schemas import ConfusionMatrix, SplitSpec


def pair_counting_auc(y_true, scores):
    y_true = np.asarray(y_true)
    scores = np.asarray(scores)
    positives = scores[y_true == 1]
    negatives = scores[y_true == 0]
    wins = (positives[:, None] > negatives[None, :]).sum() + 0.5 * (positives[:, None] == negatives[None, :]).sum()
    return wins / (len(positives) * len(negatives))


# holdout_split

def test_balanced_test_set_and_training_fraction():
    labels = np.array([1] * 100 + [0] * 100)
    train, test = holdout_split(labels, SplitSpec(test_size=40, train_malicious_fraction=0.7, shuffle_seed=3))

    assert (labels[test] == 1).sum() == 20
    assert (labels[test] == 0).sum() == 20
    assert (labels[train] == 1).sum() == 80
    assert (labels[train] == 0).sum() == 34
    assert set(train).isdisjoint(test)
    assert list(train) == sorted(train)


def test_split_is_deterministic_per_seed():
    labels = np.array([1, 0] * 60)
    first = holdout_split(labels, SplitSpec(shuffle_seed=1))
    again = holdout_split(labels, SplitSpec(shuffle_seed=1))
    other = holdout_split(labels, SplitSpec(shuffle_seed=2))
    assert all(np.array_equal(a, b) for a, b in zip(first, again))
    assert not np.array_equal(first[1], other[1])


def test_test_fraction_sets_the_per_class_size():
    labels = np.array([1] * 100 + [0] * 100)
    _, test = holdout_split(labels, SplitSpec(test_fraction=0.25))
    assert len(test) == 50


def test_malicious_rich_pool_caps_malicious_rows():
    labels = np.array([1] * 200 + [0] * 50)
    train, test = holdout_split(labels, SplitSpec(test_size=20, train_malicious_fraction=0.5))
    assert (labels[train] == 0).sum() == 40
    assert (labels[train] == 1).sum() == 40


def test_too_few_rows_per_class():
    labels = np.array([1] * 10 + [0] * 100)
    with pytest.raises(InsufficientClassCount):
        holdout_split(labels, SplitSpec(test_size=40))


# confusion

def test_confusion_cells():
    assert confusion([1, 0, 1, 0], [1, 0, 1, 0]) == ConfusionMatrix(tp=2, fn=0, fp=0, tn=2)
    flipped = confusion([1, 0, 1, 0], [0, 1, 0, 1])
    assert flipped.tp == 0 and flipped.tn == 0
    assert confusion([1, 1, 0, 0, 1, 0], [1, 0, 0, 1, 1, 0]) == ConfusionMatrix(tp=2, fn=1, fp=1, tn=2)


def test_confusion_errors():
    with pytest.raises(LengthMismatch):
        confusion([1, 0], [1])
    with pytest.raises(ValueError):
        confusion([], [])


def test_confusion_by_group():
    groups = confusion_by_group(["b.exe", None, "b.exe", "a.exe"], [1, 0, 0, 1], [1, 0, 1, 0])
    assert list(groups) == ["a.exe", "b.exe", "unknown"]
    assert groups["a.exe"] == ConfusionMatrix(fn=1)
    assert groups["b.exe"] == ConfusionMatrix(tp=1, fp=1)
    assert groups["unknown"] == ConfusionMatrix(tn=1)


# metrics

def test_large_matrix_metrics():
    report = compute_metrics(ConfusionMatrix(tp=301202, fn=11, fp=111, tn=301102))
    expected = {"acc": 0.999797, "ppv": 0.999632, "tpr": 0.999963, "fpr": 0.000369, "fnr": 0.000037, "f1": 0.999798}
    for name, value in expected.items():
        assert getattr(report, name) == pytest.approx(value, abs=5e-7)
    assert report.undefined == []


def test_symmetric_matrix_metrics():
    report = compute_metrics(ConfusionMatrix(tp=1, fn=1, fp=1, tn=1))
    assert report.acc == report.ppv == report.tpr == report.f1 == 0.5


def test_zero_denominators_are_reported():
    report = compute_metrics(ConfusionMatrix(fp=3, tn=2))
    assert report.undefined == ["tpr", "fnr", "f1"]
    assert report.tpr is None and report.fnr is None and report.f1 is None
    assert report.ppv == 0.0
    assert report.fpr == 0.6

    report = compute_metrics(ConfusionMatrix(fn=2, fp=2))
    assert report.undefined == ["f1"]


# ROC

def test_auc_examples():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.7, 0.4]) == 1.0
    assert roc_auc([1, 1, 0, 0], [0.8, 0.3, 0.5, 0.2]) == 0.75
    assert roc_auc([1, 0, 1, 0], [0.5, 0.5, 0.5, 0.5]) == 0.5
    assert roc_auc([1, 1, 0, 0], [0.1, 0.2, 0.8, 0.9]) == 0.0


def test_auc_matches_pair_counting(rng):
    for _ in range(200):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        assert roc_auc(y, scores) == pytest.approx(pair_counting_auc(y, scores), abs=1e-12)


def test_auc_needs_both_classes():
    with pytest.raises(SingleClassInput):
        roc_auc([1, 1], [0.2, 0.3])
    with pytest.raises(LengthMismatch):
        roc_auc([1, 0], [0.2])


def test_roc_points_run_corner_to_corner(rng):
    y = rng.integers(0, 2, size=100)
    y[0], y[1] = 0, 1
    points = roc_points(y, rng.random(100))
    fpr = [f for _, f, _ in points]
    tpr = [t for _, _, t in points]
    assert (fpr[0], tpr[0]) == (0.0, 0.0)
    assert (fpr[-1], tpr[-1]) == (1.0, 1.0)
    assert fpr == sorted(fpr) and tpr == sorted(tpr)


def test_score_report():
    report = score_report([1, 1, 0, 0], [0.9, 0.75, 0.74, 0.1], 0.75)
    assert report.confusion == ConfusionMatrix(tp=2, tn=2)
    assert report.acc == 1.0
    assert report.auc == 1.0
    assert report.threshold == 0.75

    single = score_report([0, 0, 0], [0.1, 0.9, 0.3], 0.5)
    assert single.auc is None
    assert "auc" in single.undefined
    assert single.confusion == ConfusionMatrix(fp=1, tn=2)
