import numpy as np
import pytest

from src.domain.errors import LengthMismatch, NonFiniteFeature, SingleClassInput, TooFewRows
from src.domain.gbdt import (
    TrainingHistory,
    build_tree,
    classify,
    find_best_split,
    midpoint,
    predict,
    predict_batch,
    split_gain,
    train_classifier,
)
from src.domain.models import LEAF, LogVector
from src.domain.schemas import GbdtParams, Verdict

GAIN_TOLERANCE = 1e-9


def exhaustive_split(X, g, h, lam, min_leaf):
    """Every (feature, threshold) candidate scored one by one."""
    candidates = []
    for feature in range(X.shape[1]):
        values = np.unique(X[:, feature])
        for low, high in zip(values[:-1], values[1:]):
            threshold = midpoint(low, high)
            left = X[:, feature] <= threshold
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            gain = split_gain(g[left].sum(), h[left].sum(), g[~left].sum(), h[~left].sum(), lam)
            candidates.append((gain, feature, threshold))
    return candidates


def random_problem(rng):
    n = int(rng.integers(10, 201))
    d = int(rng.integers(1, 9))
    X = rng.normal(size=(n, d))
    X[:, ::2] = np.round(X[:, ::2], 1)
    p = rng.uniform(0.05, 0.95, size=n)
    y = (rng.random(n) < 0.5).astype(np.float64)
    y[0], y[1] = 0.0, 1.0
    return X, y, p - y, p * (1.0 - p)


def check_node(tree, node, X, g, h, params, depth):
    candidates = exhaustive_split(X, g, h, params.lambda_, params.min_leaf)
    best = max((c[0] for c in candidates), default=None)
    if tree.feature[node] == LEAF:
        assert depth == params.max_depth or best is None or best < GAIN_TOLERANCE
        return
    assert best is not None
    feature, threshold = int(tree.feature[node]), float(tree.threshold[node])
    chosen = [c for c in candidates if c[1] == feature and c[2] == threshold]
    assert chosen, "split is not one of the candidates"
    assert chosen[0][0] == pytest.approx(best, abs=GAIN_TOLERANCE)
    runner_up = [c for c in candidates if c[0] > best - GAIN_TOLERANCE]
    if len(runner_up) == 1:
        assert (feature, threshold) == runner_up[0][1:]
    left = X[:, feature] <= threshold
    check_node(tree, tree.left[node], X[left], g[left], h[left], params, depth + 1)
    check_node(tree, tree.right[node], X[~left], g[~left], h[~left], params, depth + 1)


def test_split_finding_matches_exhaustive_search(rng):
    for _ in range(50):
        X, _, g, h = random_problem(rng)
        params = GbdtParams(max_depth=3, lambda_=float(rng.uniform(0.0, 2.0)), min_leaf=int(rng.integers(1, 6)))
        tree = build_tree(X, g, h, params)
        check_node(tree, 0, X, g, h, params, 0)


def test_best_split_ties_go_to_lowest_feature(rng):
    column = rng.normal(size=40)
    X = np.column_stack([column, column, column])
    g = np.where(column > 0, 1.0, -1.0)
    split = find_best_split(X, g, np.ones(40), 1.0, 1)
    assert split.feature == 0


def test_no_split_without_gain():
    X = np.ones((10, 3))
    g = np.linspace(-1, 1, 10)
    assert find_best_split(X, g, np.ones(10), 1.0, 1) is None
    assert find_best_split(np.arange(6.0)[:, None], g[:6], np.ones(6), 1.0, 4) is None


def test_training_loss_never_increases(rng):
    for _ in range(50):
        X, y, _, _ = random_problem(rng)
        history = TrainingHistory()
        params = GbdtParams(trees=8, max_depth=3, shrinkage=float(rng.uniform(0.05, 1.0)), min_leaf=1)
        model = train_classifier(X, y, params, history)
        assert len(history.losses) == len(model.trees) + 1
        assert all(later <= earlier for earlier, later in zip(history.losses, history.losses[1:]))


def test_small_steps_lower_the_loss_without_damping(rng):
    # with lambda 1 a shrinkage under 8/n cannot overshoot the logistic loss
    for _ in range(50):
        X, y, _, _ = random_problem(rng)
        shrinkage = float(rng.uniform(0.01, min(1.0, 4.0 / len(y))))
        history = TrainingHistory()
        params = GbdtParams(trees=8, max_depth=3, shrinkage=shrinkage, lambda_=1.0, min_leaf=1)
        model = train_classifier(X, y, params, history)
        assert history.damped_rounds == history.dropped_rounds == 0
        assert len(model.trees) == 8
        assert all(later < earlier for earlier, later in zip(history.losses, history.losses[1:]))


def test_stump_splits_on_the_separating_feature(rng):
    X = rng.uniform(0.0, 1.0, size=(200, 10))
    X[:100, 7] = rng.uniform(0.0, 0.49, size=100)
    X[100:, 7] = rng.uniform(0.51, 1.0, size=100)
    y = np.array([0] * 100 + [1] * 100)
    model = train_classifier(X, y, GbdtParams(trees=1, max_depth=1, shrinkage=1.0, min_leaf=1))

    tree = model.trees[0]
    assert tree.feature[0] == 7
    assert 0.49 <= tree.threshold[0] < 0.51
    assert tree.depth() == 1
    assert model.base_score == 0.0
    scores = predict_batch(model, X)
    predicted = (scores >= 0.5).astype(int)
    assert np.array_equal(predicted, y)


def test_zero_trees_predict_the_prior():
    X = np.arange(10.0)[:, None]
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    model = train_classifier(X, y, GbdtParams(trees=0))
    assert model.trees == []
    np.testing.assert_allclose(predict_batch(model, X), np.full(10, 0.3))


def test_training_is_deterministic_and_versioned(rng):
    X, y, _, _ = random_problem(rng)
    params = GbdtParams(trees=5, max_depth=2, min_leaf=1)
    first = train_classifier(X, y, params)
    second = train_classifier(X, y, params)
    assert first == second
    assert first.version.startswith("gbdt-")
    assert first.feature_count == X.shape[1]
    assert train_classifier(X, y, params.model_copy(update={"shrinkage": 0.5})).version != first.version


def test_training_input_errors():
    X = np.zeros((4, 2))
    with pytest.raises(LengthMismatch):
        train_classifier(X, np.array([0, 1, 0]))
    with pytest.raises(TooFewRows):
        train_classifier(X[:1], np.array([1]))
    with pytest.raises(SingleClassInput):
        train_classifier(X, np.array([1, 1, 1, 1]))
    with pytest.raises(ValueError):
        train_classifier(X, np.array([0, 1, 2, 0]))
    broken = X.copy()
    broken[2, 1] = np.nan
    with pytest.raises(NonFiniteFeature):
        train_classifier(broken, np.array([0, 1, 0, 1]))


def test_batch_prediction_matches_single_rows(trained, rng):
    model = trained["model"]
    X = rng.normal(scale=0.05, size=(1000, model.feature_count))
    batch = predict_batch(model, X)
    single = np.array([predict(model, row) for row in X])
    np.testing.assert_array_equal(batch, single)
    assert np.all((batch >= 0.0) & (batch <= 1.0))


def test_prediction_accepts_log_vectors(trained):
    model = trained["model"]
    row = trained["X"][0]
    vector = LogVector(values=row, coverage=np.ones(6))
    assert predict(model, vector) == predict(model, row)


def test_prediction_input_errors(trained):
    model = trained["model"]
    with pytest.raises(ValueError):
        predict_batch(model, np.zeros((2, 5)))
    bad = np.zeros(model.feature_count)
    bad[3] = np.inf
    with pytest.raises(NonFiniteFeature):
        predict(model, bad)


def test_classify_is_inclusive_and_monotone(rng):
    assert classify(0.75, 0.75) == Verdict.MALICIOUS
    assert classify(np.nextafter(0.75, 0.0), 0.75) == Verdict.BENIGN
    scores = np.sort(rng.random(10_000))
    verdicts = [classify(float(score), 0.75) == Verdict.MALICIOUS for score in scores]
    first = verdicts.index(True)
    assert not any(verdicts[:first]) and all(verdicts[first:])
    assert scores[first] >= 0.75 > scores[first - 1]


@pytest.mark.parametrize("score, threshold", [(0.5, 0.0), (0.5, 1.0), (-0.1, 0.5), (1.1, 0.5)])
def test_classify_rejects_out_of_range(score, threshold):
    with pytest.raises(ValueError):
        classify(score, threshold)
