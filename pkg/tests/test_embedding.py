import numpy as np
import pytest

from src.domain.embedding import (
    build_vocab,
    cosine_similarity,
    draw_negatives,
    initial_vectors,
    most_similar,
    negative_distribution,
    pair_loss_and_grad,
    sgd_pair_step,
    train_embeddings,
    training_pairs,
)
from src.domain.errors import EmptyCorpus, UnknownToken, VocabMismatch, ZeroVector
from src.domain.models import EMBEDDING_DIM, EmbeddingModel, Vocabulary
from src.domain.schemas import EmbeddingParams
from src.domain.tokenizer import GroupedTokens


def grouped(*groups) -> GroupedTokens:
    padded = list(groups) + [()] * (6 - len(groups))
    return GroupedTokens(tuple(tuple(group) for group in padded))


def random_model(rng, size: int) -> EmbeddingModel:
    vocab = Vocabulary([f"t{i:03d}" for i in range(size)], [1] * size)
    vectors = rng.normal(size=(size, EMBEDDING_DIM)).astype(np.float32)
    return EmbeddingModel(vocab, vectors, np.zeros_like(vectors))


# vocabulary

def test_vocab_orders_by_frequency_then_token():
    corpus = [grouped(("b", "a", "c", "a")), grouped(("c",), ("b", "d"))]
    vocab = build_vocab(corpus, min_count=1)
    assert vocab.tokens == ["a", "b", "c", "d"]
    assert vocab.frequencies == [2, 2, 2, 1]
    assert build_vocab(corpus, min_count=2).tokens == ["a", "b", "c"]


def test_vocab_errors():
    with pytest.raises(EmptyCorpus):
        build_vocab([], min_count=1)
    with pytest.raises(EmptyCorpus):
        build_vocab([grouped(("a",))], min_count=2)
    with pytest.raises(ValueError):
        build_vocab([grouped(("a",))], min_count=0)


# training pieces

def test_initial_vectors():
    input_vectors, output_vectors = initial_vectors(10, seed=4)
    assert input_vectors.shape == output_vectors.shape == (10, EMBEDDING_DIM)
    assert input_vectors.dtype == np.float32
    assert np.all(np.abs(input_vectors) <= 0.5 / EMBEDDING_DIM)
    assert not output_vectors.any()
    assert np.array_equal(input_vectors, initial_vectors(10, seed=4)[0])


def test_pairs_stay_inside_a_group():
    corpus = [grouped(("a", "b"), ("c",), (), ("d", "e", "f"))]
    vocab = build_vocab(corpus, min_count=1)
    centers, contexts = training_pairs(corpus, vocab, window=5)
    pairs = {(vocab.tokens[c], vocab.tokens[o]) for c, o in zip(centers, contexts)}
    assert pairs == {
        ("a", "b"), ("b", "a"),
        ("d", "e"), ("e", "d"), ("e", "f"), ("f", "e"), ("d", "f"), ("f", "d"),
    }


def test_window_limits_pair_distance():
    corpus = [grouped(("a", "b", "c", "d"))]
    vocab = build_vocab(corpus, min_count=1)
    centers, contexts = training_pairs(corpus, vocab, window=1)
    assert len(centers) == 6
    # ids follow sentence order here since every token occurs once
    assert np.all(np.abs(centers - contexts) == 1)


def test_negatives_never_hit_the_context(rng):
    vocab = Vocabulary(["a", "b", "c", "d"], [100, 10, 5, 1])
    probabilities = negative_distribution(vocab)
    assert probabilities.sum() == pytest.approx(1.0)
    contexts = rng.integers(0, 4, size=500)
    negatives = draw_negatives(rng, contexts, 5, probabilities)
    assert negatives.shape == (500, 5)
    assert not np.any(negatives == contexts[:, None])


def test_analytic_gradient_matches_finite_differences(rng):
    epsilon = 1e-4
    for _ in range(100):
        center = rng.normal(scale=0.5, size=8)
        context = rng.normal(scale=0.5, size=8)
        negatives = rng.normal(scale=0.5, size=(3, 8))
        _, d_center, d_context, d_negatives = pair_loss_and_grad(center, context, negatives)
        params = [center, context, negatives]
        analytic = [d_center, d_context, d_negatives]
        for which in range(3):
            numeric = np.zeros_like(params[which])
            for index in np.ndindex(params[which].shape):
                shifted = [p.copy() for p in params]
                shifted[which][index] += epsilon
                up = pair_loss_and_grad(*shifted)[0]
                shifted[which][index] -= 2 * epsilon
                down = pair_loss_and_grad(*shifted)[0]
                numeric[index] = (up - down) / (2 * epsilon)
            error = np.linalg.norm(numeric - analytic[which])
            scale = max(np.linalg.norm(numeric) + np.linalg.norm(analytic[which]), 1e-12)
            assert error / scale < 1e-5


def test_training_kernel_is_a_gradient_step(rng):
    for _ in range(20):
        center = rng.normal(scale=0.3, size=EMBEDDING_DIM)
        context = rng.normal(scale=0.3, size=EMBEDDING_DIM)
        negatives = rng.normal(scale=0.3, size=(5, EMBEDDING_DIM))
        lr = 1e-3
        loss, d_center, d_context, d_negatives = pair_loss_and_grad(center, context, negatives)
        new_center, new_context, new_negatives = sgd_pair_step(center, context, negatives, lr)
        np.testing.assert_allclose(new_center, center - lr * d_center, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(new_context, context - lr * d_context, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(new_negatives, negatives - lr * d_negatives, rtol=1e-9, atol=1e-12)
        assert pair_loss_and_grad(new_center, new_context, new_negatives)[0] < loss


# train_embeddings

def _cooccurrence_corpus(seed: int):
    generator = np.random.default_rng(seed)
    malicious = ["mal_a", "mal_b", "mal_1", "mal_2", "mal_3"]
    benign = ["ben_x", "ben_1", "ben_2", "ben_3", "ben_4"]
    corpus = []
    for index in range(200):
        words = malicious if index % 2 else benign
        corpus.append(grouped(tuple(generator.permutation(words))))
    return corpus


def test_cooccurring_tokens_end_up_closer():
    corpus = _cooccurrence_corpus(1)
    vocab = build_vocab(corpus, min_count=1)
    model = train_embeddings(corpus, vocab, EmbeddingParams(window=2, negatives=3, epochs=20,
                                                            initial_lr=0.05, min_count=1, seed=9))
    together = cosine_similarity(model.vector("mal_a"), model.vector("mal_b"))
    apart = cosine_similarity(model.vector("mal_a"), model.vector("ben_x"))
    assert together > apart


def test_training_is_deterministic_per_seed():
    corpus = _cooccurrence_corpus(2)
    vocab = build_vocab(corpus, min_count=1)
    params = EmbeddingParams(window=2, negatives=2, epochs=2, min_count=1, seed=5)
    first = train_embeddings(corpus, vocab, params)
    assert first == train_embeddings(corpus, vocab, params)
    other = train_embeddings(corpus, vocab, params.model_copy(update={"seed": 6}))
    assert not np.array_equal(first.input_vectors, other.input_vectors)
    assert first.input_vectors.dtype == np.float32
    assert np.all(np.isfinite(first.input_vectors))


def test_training_errors():
    corpus = [grouped(("a", "b"))]
    with pytest.raises(EmptyCorpus):
        train_embeddings([], Vocabulary(["a"], [1]), EmbeddingParams())
    with pytest.raises(VocabMismatch):
        train_embeddings(corpus, Vocabulary(["a", "b", "zz"], [1, 1, 1]), EmbeddingParams())


def test_single_token_vocab_keeps_initialization():
    corpus = [grouped(("a",)), grouped((), ("a",))]
    vocab = build_vocab(corpus, min_count=1)
    model = train_embeddings(corpus, vocab, EmbeddingParams(seed=2))
    assert np.array_equal(model.input_vectors, initial_vectors(1, 2)[0])


# similarity

def test_cosine_similarity():
    assert cosine_similarity([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)
    assert cosine_similarity([1.0, 1.0], [-1.0, -1.0]) == pytest.approx(-1.0)
    with pytest.raises(ZeroVector):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_most_similar_matches_full_scan(rng):
    model = random_model(rng, 200)
    for token in ("t000", "t057", "t199"):
        expected = sorted(
            (-cosine_similarity(model.vector(token), model.vector(other)), other)
            for other in model.vocab.tokens if other != token
        )[:10]
        found = most_similar(model, token, 10)
        assert [name for name, _ in found] == [name for _, name in expected]
        for (_, similarity), (negated, _) in zip(found, expected):
            assert similarity == pytest.approx(-negated, abs=1e-9)
        assert token not in [name for name, _ in found]


def test_most_similar_errors(rng):
    model = random_model(rng, 5)
    with pytest.raises(UnknownToken):
        most_similar(model, "missing", 1)
    with pytest.raises(ValueError):
        most_similar(model, "t000", 0)
    with pytest.raises(ValueError):
        most_similar(model, "t000", 5)
    assert len(most_similar(model, "t000", 4)) == 4
