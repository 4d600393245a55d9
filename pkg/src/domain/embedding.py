"""Skip-gram word embeddings with negative sampling over grouped log tokens.

Context windows never cross a group or a log: each of the six token groups of
every log is treated as its own sentence. Training is single-threaded and
fully determined by ``EmbeddingParams.seed``.
"""
import logging
from collections import Counter
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.special import expit

from src.domain.errors import EmptyCorpus, UnknownToken, VocabMismatch, ZeroVector
from src.domain.models import EMBEDDING_DIM, EmbeddingModel, Vocabulary
from src.domain.schemas import EmbeddingParams
from src.domain.tokenizer import GroupedTokens

logger = logging.getLogger(__name__)

UNIGRAM_POWER = 0.75
MIN_LR_FRACTION = 1e-4


def build_vocab(corpus: Iterable[GroupedTokens], min_count: int) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_count`` times.

    Ids follow descending frequency; equal frequencies are ordered
    lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    counts: Counter = Counter()
    for tokens in corpus:
        counts.update(tokens.all_tokens())
    if not counts:
        raise EmptyCorpus("corpus contains no tokens")
    kept = sorted(
        ((token, count) for token, count in counts.items() if count >= min_count),
        key=lambda item: (-item[1], item[0]),
    )
    if not kept:
        raise EmptyCorpus(f"no token occurs at least {min_count} times")
    return Vocabulary([token for token, _ in kept], [count for _, count in kept], min_count)


def initial_vectors(vocab_size: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    input_vectors = ((rng.random((vocab_size, EMBEDDING_DIM)) - 0.5) / EMBEDDING_DIM).astype(np.float32)
    output_vectors = np.zeros((vocab_size, EMBEDDING_DIM), dtype=np.float32)
    return input_vectors, output_vectors


def training_pairs(corpus: Sequence[GroupedTokens], vocab: Vocabulary, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """(center, context) id pairs within ``window`` positions of each other."""
    centers: List[np.ndarray] = []
    contexts: List[np.ndarray] = []
    for tokens in corpus:
        for group in tokens.groups:
            ids = np.array([vocab.index[t] for t in group if t in vocab.index], dtype=np.int64)
            for offset in range(1, min(window, len(ids) - 1) + 1):
                centers += [ids[:-offset], ids[offset:]]
                contexts += [ids[offset:], ids[:-offset]]
    if not centers:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    return np.concatenate(centers), np.concatenate(contexts)


def negative_distribution(vocab: Vocabulary) -> np.ndarray:
    weights = np.asarray(vocab.frequencies, dtype=np.float64) ** UNIGRAM_POWER
    return weights / weights.sum()


def draw_negatives(rng: np.random.Generator, contexts: np.ndarray, k: int, probabilities: np.ndarray) -> np.ndarray:
    """Sample ``k`` negatives per pair, never equal to the pair's context."""
    size = len(probabilities)
    negatives = rng.choice(size, size=(len(contexts), k), p=probabilities)
    clashes = negatives == contexts[:, None]
    while clashes.any():
        negatives[clashes] = rng.choice(size, size=int(clashes.sum()), p=probabilities)
        clashes = negatives == contexts[:, None]
    return negatives


@njit(cache=True)
def _pair_update(input_vectors, output_vectors, center, context, negatives, lr):
    dim = input_vectors.shape[1]
    center_error = np.zeros(dim)
    for k in range(negatives.shape[0] + 1):
        if k == 0:
            target = context
            label = 1.0
        else:
            target = negatives[k - 1]
            label = 0.0
        dot = 0.0
        for d in range(dim):
            dot += input_vectors[center, d] * output_vectors[target, d]
        step = (label - 1.0 / (1.0 + np.exp(-dot))) * lr
        for d in range(dim):
            center_error[d] += step * output_vectors[target, d]
            output_vectors[target, d] += step * input_vectors[center, d]
    for d in range(dim):
        input_vectors[center, d] += center_error[d]


@njit(cache=True)
def _train_epoch(input_vectors, output_vectors, centers, contexts, negatives,
                 initial_lr, first_step, total_steps, min_fraction):
    for p in range(centers.shape[0]):
        fraction = 1.0 - (first_step + p) / total_steps
        if fraction < min_fraction:
            fraction = min_fraction
        _pair_update(input_vectors, output_vectors, centers[p], contexts[p], negatives[p], initial_lr * fraction)


def pair_loss_and_grad(center: np.ndarray, context: np.ndarray, negatives: np.ndarray):
    """Negative-sampling loss of one pair and its gradients.

    Returns ``(loss, d_center, d_context, d_negatives)`` where the loss is
    ``-log s(u_o.v_c) - sum_k log s(-u_k.v_c)``.
    """
    positive = float(context @ center)
    negative = negatives @ center
    loss = float(np.logaddexp(0.0, -positive) + np.sum(np.logaddexp(0.0, negative)))
    positive_sigma = expit(positive)
    negative_sigma = expit(negative)
    d_center = (positive_sigma - 1.0) * context + negative_sigma @ negatives
    d_context = (positive_sigma - 1.0) * center
    d_negatives = np.outer(negative_sigma, center)
    return loss, d_center, d_context, d_negatives


def sgd_pair_step(center: np.ndarray, context: np.ndarray, negatives: np.ndarray, lr: float):
    """One training-kernel update on a standalone pair; returns the new vectors."""
    input_vectors = np.array(center, dtype=np.float64)[None, :].copy()
    output_vectors = np.vstack([context, negatives]).astype(np.float64)
    negative_ids = np.arange(1, len(negatives) + 1, dtype=np.int64)
    _pair_update(input_vectors, output_vectors, 0, 0, negative_ids, lr)
    return input_vectors[0], output_vectors[0], output_vectors[1:]


def train_embeddings(corpus: Iterable[GroupedTokens], vocab: Vocabulary, params: EmbeddingParams) -> EmbeddingModel:
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot train embeddings on an empty corpus")
    seen = {token for tokens in corpus for token in tokens.all_tokens() if token in vocab.index}
    if len(seen) != len(vocab):
        raise VocabMismatch(f"{len(vocab) - len(seen)} vocabulary tokens never occur in the corpus")

    input_vectors, output_vectors = initial_vectors(len(vocab), params.seed)
    centers, contexts = training_pairs(corpus, vocab, params.window)
    if len(centers) == 0 or len(vocab) < 2:
        logger.info("no training pairs for a %d-token vocabulary, vectors keep their initialization", len(vocab))
        return EmbeddingModel(vocab, input_vectors, output_vectors, params)

    rng = np.random.default_rng(params.seed + 1)
    probabilities = negative_distribution(vocab)
    total_steps = params.epochs * len(centers)
    logger.info("training embeddings: %d tokens, %d pairs x %d epochs", len(vocab), len(centers), params.epochs)
    for epoch in range(params.epochs):
        order = rng.permutation(len(centers))
        epoch_centers = centers[order]
        epoch_contexts = contexts[order]
        negatives = draw_negatives(rng, epoch_contexts, params.negatives, probabilities)
        _train_epoch(input_vectors, output_vectors, epoch_centers, epoch_contexts, negatives,
                     params.initial_lr, epoch * len(centers), total_steps, MIN_LR_FRACTION)
        logger.debug("embedding epoch %d/%d done", epoch + 1, params.epochs)
    return EmbeddingModel(vocab, input_vectors, output_vectors, params)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (norm_a * norm_b), -1.0, 1.0))


def most_similar(model: EmbeddingModel, token: str, k: int) -> List[Tuple[str, float]]:
    """The ``k`` tokens closest to ``token`` by cosine similarity."""
    if token not in model.vocab:
        raise UnknownToken(f"{token!r} is not in the vocabulary")
    if not 1 <= k < len(model.vocab):
        raise ValueError(f"k must be in [1, {len(model.vocab) - 1}]")
    vectors = model.input_vectors.astype(np.float64)
    query_id = model.vocab.index[token]
    query = vectors[query_id]
    query_norm = np.linalg.norm(query)
    if query_norm == 0.0:
        raise ZeroVector(f"{token!r} has a zero embedding")
    norms = np.linalg.norm(vectors, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        similarities = np.where(norms > 0, vectors @ query / (norms * query_norm), 0.0)
    similarities = np.clip(similarities, -1.0, 1.0)
    ranked = sorted(
        ((-float(similarities[i]), model.vocab.tokens[i]) for i in range(len(model.vocab)) if i != query_id),
    )
    return [(name, -negated) for negated, name in ranked[:k]]
