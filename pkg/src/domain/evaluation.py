"""Holdout splitting, confusion matrices and detection metrics.

Malicious is the positive class (label 1) throughout.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix, roc_curve

from src.domain.errors import DegenerateDenominator, InsufficientClassCount, LengthMismatch, SingleClassInput
from src.domain.schemas import ConfusionMatrix, MetricsReport, SplitSpec

logger = logging.getLogger(__name__)

METRIC_NAMES = ("acc", "ppv", "tpr", "fpr", "fnr", "f1")


def holdout_split(labels: Sequence[int], spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of a (train, test) partition of ``labels``.

    The test set is drawn first with equal class counts; the training set
    takes as much of the remainder as the requested malicious fraction allows.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.shuffle_seed)
    malicious = rng.permutation(np.flatnonzero(labels == 1))
    benign = rng.permutation(np.flatnonzero(labels == 0))

    if spec.test_size is not None:
        per_class = spec.test_size // 2
    else:
        per_class = int(round(spec.test_fraction * len(labels) / 2))
    per_class = max(per_class, 1)
    if len(malicious) <= per_class or len(benign) <= per_class:
        raise InsufficientClassCount(
            f"need more than {per_class} logs per class, have {len(malicious)} malicious and {len(benign)} benign"
        )

    test = np.concatenate([malicious[:per_class], benign[:per_class]])
    rest_malicious = malicious[per_class:]
    rest_benign = benign[per_class:]

    fraction = spec.train_malicious_fraction
    available = len(rest_malicious) / (len(rest_malicious) + len(rest_benign))
    if available >= fraction:
        n_benign = len(rest_benign)
        n_malicious = min(len(rest_malicious), max(1, int(round(fraction * n_benign / (1.0 - fraction)))))
    else:
        n_malicious = len(rest_malicious)
        n_benign = min(len(rest_benign), max(1, int(round(n_malicious * (1.0 - fraction) / fraction))))
    train = np.concatenate([rest_malicious[:n_malicious], rest_benign[:n_benign]])
    logger.info("holdout split: train %d malicious / %d benign, test %d / %d",
                n_malicious, n_benign, per_class, per_class)
    return np.sort(train), np.sort(test)


def _check_lengths(a: Sequence, b: Sequence):
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} labels but {len(b)} predictions")


def confusion(y_true: Sequence[int], y_pred: Sequence[int]) -> ConfusionMatrix:
    _check_lengths(y_true, y_pred)
    if len(y_true) == 0:
        raise ValueError("confusion matrix of no samples")
    tn, fp, fn, tp = confusion_matrix(np.asarray(y_true), np.asarray(y_pred), labels=[0, 1]).ravel()
    return ConfusionMatrix(tp=int(tp), fn=int(fn), fp=int(fp), tn=int(tn))


def _ratio(name: str, numerator: float, denominator: float) -> float:
    if denominator == 0:
        raise DegenerateDenominator(f"{name} has a zero denominator")
    return numerator / denominator


def _f1(cm: ConfusionMatrix) -> float:
    precision = _ratio("ppv", cm.tp, cm.tp + cm.fp)
    recall = _ratio("tpr", cm.tp, cm.tp + cm.fn)
    return _ratio("f1", 2.0 * precision * recall, precision + recall)


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Threshold metrics of a confusion matrix; a zero denominator leaves the
    metric ``None`` and lists it under ``undefined``."""
    formulas = {
        "acc": lambda: _ratio("acc", cm.tp + cm.tn, cm.total),
        "ppv": lambda: _ratio("ppv", cm.tp, cm.tp + cm.fp),
        "tpr": lambda: _ratio("tpr", cm.tp, cm.tp + cm.fn),
        "fpr": lambda: _ratio("fpr", cm.fp, cm.fp + cm.tn),
        "fnr": lambda: _ratio("fnr", cm.fn, cm.tp + cm.fn),
        "f1": lambda: _f1(cm),
    }
    values: Dict[str, Optional[float]] = {}
    undefined: List[str] = []
    for name in METRIC_NAMES:
        try:
            values[name] = formulas[name]()
        except DegenerateDenominator:
            values[name] = None
            undefined.append(name)
    return MetricsReport(**values, undefined=undefined, confusion=cm)


def _check_scores(y_true, scores) -> Tuple[np.ndarray, np.ndarray]:
    _check_lengths(y_true, scores)
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if not (np.any(y_true == 1) and np.any(y_true == 0)):
        raise SingleClassInput("ROC analysis needs both classes")
    return y_true, scores


def roc_auc(y_true: Sequence[int], scores: Sequence[float]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic with midranks."""
    y_true, scores = _check_scores(y_true, scores)
    positives = y_true == 1
    n_pos = int(positives.sum())
    n_neg = len(y_true) - n_pos
    ranks = rankdata(scores, method="average")
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(y_true: Sequence[int], scores: Sequence[float]) -> List[Tuple[float, float, float]]:
    """(threshold, fpr, tpr) for every distinct operating point."""
    y_true, scores = _check_scores(y_true, scores)
    fpr, tpr, thresholds = roc_curve(y_true, scores, pos_label=1, drop_intermediate=False)
    return [(float(t), float(f), float(r)) for t, f, r in zip(thresholds, fpr, tpr)]


def confusion_by_group(keys: Sequence[Optional[str]], y_true: Sequence[int],
                       y_pred: Sequence[int]) -> Dict[str, ConfusionMatrix]:
    """One confusion matrix per distinct key, e.g. per host executable."""
    _check_lengths(keys, y_true)
    _check_lengths(y_true, y_pred)
    grouped: Dict[str, Tuple[List[int], List[int]]] = {}
    for key, actual, predicted in zip(keys, y_true, y_pred):
        truth, guesses = grouped.setdefault(key or "unknown", ([], []))
        truth.append(int(actual))
        guesses.append(int(predicted))
    return {key: confusion(*grouped[key]) for key in sorted(grouped)}


def score_report(y_true: Sequence[int], scores: Sequence[float], threshold: float) -> MetricsReport:
    """Full report for scored samples at ``threshold`` (inclusive)."""
    _check_lengths(y_true, scores)
    scores = np.asarray(scores, dtype=np.float64)
    y_pred = (scores >= threshold).astype(np.int64)
    report = compute_metrics(confusion(y_true, y_pred))
    try:
        auc = roc_auc(y_true, scores)
    except SingleClassInput:
        auc = None
        report.undefined.append("auc")
    return report.model_copy(update={"auc": auc, "threshold": threshold})
