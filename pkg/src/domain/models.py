from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.domain.schemas import EmbeddingParams

EMBEDDING_DIM = 32
GROUP_COUNT = 6
FEATURE_COUNT = EMBEDDING_DIM * GROUP_COUNT
LEAF = -1


@dataclass
class Vocabulary:
    tokens: List[str]
    frequencies: List[int]
    min_count: int = 1
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if len(self.frequencies) != len(self.tokens):
            raise ValueError("one frequency per token is required")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.tokens == other.tokens and self.frequencies == other.frequencies


@dataclass(eq=False)
class EmbeddingModel:
    vocab: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    hyperparams: Optional[EmbeddingParams] = None

    def __post_init__(self):
        expected = (len(self.vocab), EMBEDDING_DIM)
        for matrix in (self.input_vectors, self.output_vectors):
            if matrix.shape != expected:
                raise ValueError(f"embedding matrices must have shape {expected}, got {matrix.shape}")
            if not np.all(np.isfinite(matrix)):
                raise ValueError("embedding matrices must be finite")

    @property
    def dim(self) -> int:
        return EMBEDDING_DIM

    def vector(self, token: str) -> np.ndarray:
        return self.input_vectors[self.vocab.index[token]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.input_vectors.dtype == other.input_vectors.dtype
            and np.array_equal(self.input_vectors, other.input_vectors)
            and np.array_equal(self.output_vectors, other.output_vectors)
        )


@dataclass(eq=False)
class RegressionTree:
    """Binary tree stored as parallel arrays in preorder.

    ``feature[i] == LEAF`` marks a leaf whose prediction is ``value[i]``;
    internal nodes send rows with ``x[feature] <= threshold`` to ``left[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    @classmethod
    def from_nodes(cls, nodes: List[dict], max_depth: int) -> "RegressionTree":
        return cls(
            feature=np.array([n.get("feature", LEAF) for n in nodes], dtype=np.int64),
            threshold=np.array([n.get("threshold", 0.0) for n in nodes], dtype=np.float64),
            left=np.array([n.get("left", LEAF) for n in nodes], dtype=np.int64),
            right=np.array([n.get("right", LEAF) for n in nodes], dtype=np.int64),
            value=np.array([n.get("value", 0.0) for n in nodes], dtype=np.float64),
            max_depth=max_depth,
        )

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def depth(self, node: int = 0) -> int:
        if self.is_leaf(node):
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf each row of ``X`` lands in."""
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth + 1):
            internal = self.feature[nodes] != LEAF
            if not internal.any():
                break
            active = rows[internal]
            current = nodes[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.left[current], self.right[current])
        return nodes

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def scale(self, factor: float) -> None:
        self.value = self.value * factor

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return self.max_depth == other.max_depth and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("feature", "threshold", "left", "right", "value")
        )


@dataclass(eq=False)
class GbdtModel:
    trees: List[RegressionTree]
    shrinkage: float
    base_score: float
    lambda_: float
    max_depth: int
    feature_count: int = FEATURE_COUNT
    version: str = ""

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0], dtype=np.float64)
        for tree in self.trees:
            total += tree.predict(X)
        return self.base_score + self.shrinkage * total

    def __eq__(self, other) -> bool:
        if not isinstance(other, GbdtModel):
            return NotImplemented
        return (
            self.shrinkage == other.shrinkage
            and self.base_score == other.base_score
            and self.lambda_ == other.lambda_
            and self.max_depth == other.max_depth
            and self.feature_count == other.feature_count
            and self.version == other.version
            and len(self.trees) == len(other.trees)
            and all(a == b for a, b in zip(self.trees, other.trees))
        )


@dataclass(frozen=True, eq=False)
class LogVector:
    values: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        if self.values.shape != (FEATURE_COUNT,):
            raise ValueError(f"log vectors have {FEATURE_COUNT} entries, got {self.values.shape}")
        if self.coverage.shape != (GROUP_COUNT,):
            raise ValueError(f"coverage has {GROUP_COUNT} entries, got {self.coverage.shape}")
