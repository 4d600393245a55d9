"""Second-order gradient boosting with logistic loss over log vectors.

Trees are grown by exact greedy search: every midpoint between consecutive
distinct values of every feature is a candidate threshold. Ties in gain go to
the lowest feature index, then to the lowest threshold.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from src.domain.errors import LengthMismatch, NonFiniteFeature, SingleClassInput, TooFewRows
from src.domain.models import GbdtModel, LogVector, RegressionTree
from src.domain.schemas import GbdtParams, Verdict

logger = logging.getLogger(__name__)

MAX_DAMPING_STEPS = 20


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


@dataclass
class TrainingHistory:
    """Training log-loss before the first round and after every kept round."""

    losses: List[float] = field(default_factory=list)
    damped_rounds: int = 0
    dropped_rounds: int = 0


def sigmoid(z):
    return expit(z)


def log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    """Summed logistic loss of raw scores ``raw`` against 0/1 labels."""
    return float(np.sum(np.logaddexp(0.0, raw) - y * raw))


def split_gain(G_left, H_left, G_right, H_right, lam):
    parent = (G_left + G_right) ** 2 / (H_left + H_right + lam)
    return 0.5 * (G_left ** 2 / (H_left + lam) + G_right ** 2 / (H_right + lam) - parent)


def midpoint(low: float, high: float) -> float:
    threshold = low + (high - low) / 2.0
    if not low <= threshold < high:
        threshold = low
    return float(threshold)


def find_best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, min_leaf: int) -> Optional[Split]:
    """Best split of the rows of ``X`` or ``None`` when no split has positive gain.

    Both children must keep at least ``min_leaf`` rows.
    """
    n, n_features = X.shape
    if n < 2 * min_leaf or n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    sorted_x = np.take_along_axis(X, order, axis=0)
    G_left = np.cumsum(g[order], axis=0)[:-1]
    H_left = np.cumsum(h[order], axis=0)[:-1]
    G_total = g.sum()
    H_total = h.sum()
    left_rows = np.arange(1, n)[:, None]
    valid = (
        (sorted_x[:-1] < sorted_x[1:])
        & (left_rows >= min_leaf)
        & (n - left_rows >= min_leaf)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = split_gain(G_left, H_left, G_total - G_left, H_total - H_left, lam)
    gains = np.where(valid & np.isfinite(gains), gains, -np.inf)

    best_rows = np.argmax(gains, axis=0)
    best_gains = gains[best_rows, np.arange(n_features)]
    feature = int(np.argmax(best_gains))
    gain = float(best_gains[feature])
    if not gain > 0.0:
        return None
    row = best_rows[feature]
    threshold = midpoint(sorted_x[row, feature], sorted_x[row + 1, feature])
    return Split(feature=feature, threshold=threshold, gain=gain)


def _leaf_value(G: float, H: float, lam: float) -> float:
    denominator = H + lam
    return float(-G / denominator) if denominator > 0 else 0.0


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, params: GbdtParams) -> RegressionTree:
    nodes: List[dict] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append({})
        split = None
        if depth < params.max_depth:
            split = find_best_split(X[rows], g[rows], h[rows], params.lambda_, params.min_leaf)
        if split is None:
            nodes[node_id] = {"value": _leaf_value(g[rows].sum(), h[rows].sum(), params.lambda_)}
            return node_id
        goes_left = X[rows, split.feature] <= split.threshold
        node = {"feature": split.feature, "threshold": split.threshold}
        nodes[node_id] = node
        node["left"] = grow(rows[goes_left], depth + 1)
        node["right"] = grow(rows[~goes_left], depth + 1)
        return node_id

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree.from_nodes(nodes, params.max_depth)


def _check_training_input(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2:
        raise ValueError("feature matrix must be two-dimensional")
    if X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise TooFewRows("training needs at least two rows")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("feature matrix contains NaN or infinity")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise SingleClassInput("training data contains a single class")


def model_digest(model: GbdtModel) -> str:
    digest = hashlib.sha256()
    digest.update(struct.pack("<ddd", model.shrinkage, model.base_score, model.lambda_))
    digest.update(struct.pack("<II", model.max_depth, model.feature_count))
    for tree in model.trees:
        for array in (tree.feature, tree.threshold, tree.left, tree.right, tree.value):
            digest.update(np.ascontiguousarray(array).tobytes())
    return f"gbdt-{digest.hexdigest()[:16]}"


def train_classifier(X: np.ndarray, y: np.ndarray, params: Optional[GbdtParams] = None,
                     history: Optional[TrainingHistory] = None) -> GbdtModel:
    """Fit a boosted ensemble; ``history`` collects the per-round training loss.

    A round whose step would raise the training loss has its leaf values
    halved until it does not; after ``MAX_DAMPING_STEPS`` halvings the round
    is dropped.
    """
    params = params or GbdtParams()
    history = history if history is not None else TrainingHistory()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_training_input(X, y)

    prior = float(y.mean())
    base_score = float(np.log(prior / (1.0 - prior)))
    raw = np.full(X.shape[0], base_score)
    loss = log_loss(y, raw)
    history.losses.append(loss)
    trees: List[RegressionTree] = []

    for round_index in range(params.trees):
        probability = sigmoid(raw)
        g = probability - y
        h = probability * (1.0 - probability)
        tree = build_tree(X, g, h, params)
        step = params.shrinkage * tree.predict(X)
        for halvings in range(MAX_DAMPING_STEPS + 1):
            candidate = raw + step
            candidate_loss = log_loss(y, candidate)
            if candidate_loss <= loss:
                break
            tree.scale(0.5)
            step = step * 0.5
        else:
            history.dropped_rounds += 1
            logger.debug("round %d dropped: no damped step lowers the loss", round_index)
            continue
        if halvings:
            history.damped_rounds += 1
        raw = candidate
        loss = candidate_loss
        trees.append(tree)
        history.losses.append(loss)
        logger.debug("round %d: %d nodes, loss %.6f", round_index, tree.node_count, loss)

    model = GbdtModel(
        trees=trees,
        shrinkage=params.shrinkage,
        base_score=base_score,
        lambda_=params.lambda_,
        max_depth=params.max_depth,
        feature_count=X.shape[1],
    )
    model.version = model_digest(model)
    logger.info("trained %d trees (%d damped, %d dropped), final loss %.6f",
                len(trees), history.damped_rounds, history.dropped_rounds, loss)
    return model


def _as_features(x) -> np.ndarray:
    if isinstance(x, LogVector):
        x = x.values
    return np.asarray(x, dtype=np.float64)


def predict_batch(model: GbdtModel, X) -> np.ndarray:
    X = np.atleast_2d(_as_features(X))
    if X.shape[1] != model.feature_count:
        raise ValueError(f"model expects {model.feature_count} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("feature vector contains NaN or infinity")
    return sigmoid(model.raw_score(X))


def predict(model: GbdtModel, x) -> float:
    """Malicious probability of a single vector."""
    x = _as_features(x)
    if x.ndim != 1:
        raise ValueError("predict takes a single vector, use predict_batch for matrices")
    return float(predict_batch(model, x[None, :])[0])


def classify(score: float, threshold: float) -> Verdict:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    if not 0.0 <= score <= 1.0:
        raise ValueError("score must lie in [0, 1]")
    return Verdict.MALICIOUS if score >= threshold else Verdict.BENIGN
