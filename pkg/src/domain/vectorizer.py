"""Mean-pool per-group token embeddings into one fixed-length vector per log."""
import logging
from typing import Sequence, Tuple

import numpy as np

from src.domain.errors import UnlabeledLog
from src.domain.models import EMBEDDING_DIM, FEATURE_COUNT, GROUP_COUNT, EmbeddingModel, LogVector
from src.domain.schemas import CanonicalLog, Label
from src.domain.tokenizer import GroupedTokens, tokenize

logger = logging.getLogger(__name__)


def vectorize_log(tokens: GroupedTokens, model: EmbeddingModel) -> LogVector:
    """Concatenate the mean input vector of every group.

    Out-of-vocabulary tokens are skipped; a group without any known token
    contributes zeros.
    """
    values = np.zeros(FEATURE_COUNT, dtype=np.float64)
    coverage = np.zeros(GROUP_COUNT, dtype=np.float64)
    index = model.vocab.index
    for group_id, group in enumerate(tokens.groups):
        ids = [index[token] for token in group if token in index]
        if group:
            coverage[group_id] = len(ids) / len(group)
        if ids:
            segment = model.input_vectors[ids].astype(np.float64).mean(axis=0)
            values[group_id * EMBEDDING_DIM:(group_id + 1) * EMBEDDING_DIM] = segment
    return LogVector(values=values, coverage=coverage)


def label_value(log: CanonicalLog) -> int:
    if log.label is None:
        raise UnlabeledLog("every training log needs a label")
    return 1 if Label(log.label) == Label.MALICIOUS else 0


def vectorize_corpus(logs: Sequence[CanonicalLog], model: EmbeddingModel) -> Tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n x 192) and 0/1 labels (1 = malicious), in input order."""
    labels = np.array([label_value(log) for log in logs], dtype=np.int64)
    X = np.zeros((len(logs), FEATURE_COUNT), dtype=np.float64)
    low_coverage = 0
    for row, log in enumerate(logs):
        vector = vectorize_log(tokenize(log), model)
        X[row] = vector.values
        if vector.coverage.mean() < 0.5:
            low_coverage += 1
    if low_coverage:
        logger.info("%d of %d logs have under half of their tokens in the vocabulary", low_coverage, len(logs))
    return X, labels
