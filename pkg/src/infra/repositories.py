"""Persistence of trained models, corpora, vector datasets and the audit log.

Both model files are little-endian binary formats:

embeddings  ``MLEB`` u32 version, u32 dim, u32 vocab size, u32 min_count,
            then per token a u32 byte length, UTF-8 bytes and a u64 frequency,
            then the float32 input matrix and the float32 output matrix.

classifier  ``MLGB`` u32 version, u32 tree count, u32 max depth,
            u32 feature count, f64 shrinkage, f64 lambda, f64 base score,
            u32 length + UTF-8 version string, then every tree in preorder:
            a leaf is u8 1 + f64 value, an internal node is u8 0 + u32 feature
            + f64 threshold followed by its left and right subtrees.
"""
import csv
import json
import logging
import math
import struct
import threading
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.domain.errors import BadMagic, CorruptPayload, LogParseError, ModelLoadFailure, VersionMismatch
from src.domain.logmodel import parse_log, serialize_log
from src.domain.models import EMBEDDING_DIM, EmbeddingModel, GbdtModel, RegressionTree, Vocabulary
from src.domain.schemas import CanonicalLog, Label

logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"MLEB"
MODEL_MAGIC = b"MLGB"
FORMAT_VERSION = 1
MAX_TREE_DEPTH = 64
LABELS_FILE = "labels.csv"


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, size: int) -> bytes:
        if size < 0 or size > self.remaining:
            raise CorruptPayload(f"truncated payload at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self, magic: bytes):
        if self.data[:len(magic)] != magic:
            raise BadMagic(f"expected magic {magic!r}")
        self.offset = len(magic)
        (version,) = self.unpack("<I")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"format version {version}, this build reads {FORMAT_VERSION}")

    def finish(self):
        if self.remaining:
            raise CorruptPayload(f"{self.remaining} trailing bytes")


def _read_file(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ModelLoadFailure(f"cannot read {path}: {exc.strerror or exc}") from None


class EmbeddingRepository:
    @staticmethod
    def encode(model: EmbeddingModel) -> bytes:
        vocab = model.vocab
        parts = [EMBEDDING_MAGIC, struct.pack("<IIII", FORMAT_VERSION, EMBEDDING_DIM, len(vocab), vocab.min_count)]
        for token, frequency in zip(vocab.tokens, vocab.frequencies):
            raw = token.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<Q", frequency))
        for matrix in (model.input_vectors, model.output_vectors):
            parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
        return b"".join(parts)

    @staticmethod
    def decode(data: bytes) -> EmbeddingModel:
        reader = _Reader(data)
        reader.header(EMBEDDING_MAGIC)
        dim, size, min_count = reader.unpack("<III")
        if dim != EMBEDDING_DIM:
            raise CorruptPayload(f"embedding dimension {dim}, expected {EMBEDDING_DIM}")
        if size * 12 > reader.remaining:
            raise CorruptPayload(f"vocabulary of {size} tokens does not fit the payload")
        tokens: List[str] = []
        frequencies: List[int] = []
        for _ in range(size):
            (length,) = reader.unpack("<I")
            try:
                tokens.append(reader.take(length).decode("utf-8"))
            except UnicodeDecodeError:
                raise CorruptPayload("vocabulary token is not UTF-8") from None
            (frequency,) = reader.unpack("<Q")
            frequencies.append(frequency)
        matrix_bytes = size * dim * 4
        matrices = [
            np.frombuffer(reader.take(matrix_bytes), dtype="<f4").astype(np.float32).reshape(size, dim)
            for _ in range(2)
        ]
        reader.finish()
        try:
            vocab = Vocabulary(tokens, frequencies, max(min_count, 1))
            return EmbeddingModel(vocab, matrices[0], matrices[1])
        except ValueError as exc:
            raise CorruptPayload(str(exc)) from None

    @staticmethod
    def save(path: Path, model: EmbeddingModel) -> None:
        Path(path).write_bytes(EmbeddingRepository.encode(model))
        logger.info("wrote %d-token embeddings to %s", len(model.vocab), path)

    @staticmethod
    def load(path: Path) -> EmbeddingModel:
        return EmbeddingRepository.decode(_read_file(path))


class ModelRepository:
    @staticmethod
    def _encode_node(tree: RegressionTree, node: int, parts: list):
        if tree.is_leaf(node):
            parts.append(struct.pack("<Bd", 1, tree.value[node]))
            return
        parts.append(struct.pack("<BId", 0, tree.feature[node], tree.threshold[node]))
        ModelRepository._encode_node(tree, tree.left[node], parts)
        ModelRepository._encode_node(tree, tree.right[node], parts)

    @staticmethod
    def encode(model: GbdtModel) -> bytes:
        version = model.version.encode("utf-8")
        parts = [
            MODEL_MAGIC,
            struct.pack("<IIII", FORMAT_VERSION, len(model.trees), model.max_depth, model.feature_count),
            struct.pack("<ddd", model.shrinkage, model.lambda_, model.base_score),
            struct.pack("<I", len(version)),
            version,
        ]
        for tree in model.trees:
            ModelRepository._encode_node(tree, 0, parts)
        return b"".join(parts)

    @staticmethod
    def _decode_node(reader: _Reader, nodes: list, depth: int, max_depth: int, feature_count: int) -> int:
        if depth > max_depth:
            raise CorruptPayload(f"tree deeper than its declared max depth {max_depth}")
        (kind,) = reader.unpack("<B")
        node_id = len(nodes)
        if kind == 1:
            (value,) = reader.unpack("<d")
            if not math.isfinite(value):
                raise CorruptPayload("non-finite leaf value")
            nodes.append({"value": value})
            return node_id
        if kind != 0:
            raise CorruptPayload(f"unknown node tag {kind}")
        feature, threshold = reader.unpack("<Id")
        if feature >= feature_count:
            raise CorruptPayload(f"split feature {feature} out of range")
        node = {"feature": feature, "threshold": threshold}
        nodes.append(node)
        node["left"] = ModelRepository._decode_node(reader, nodes, depth + 1, max_depth, feature_count)
        node["right"] = ModelRepository._decode_node(reader, nodes, depth + 1, max_depth, feature_count)
        return node_id

    @staticmethod
    def decode(data: bytes) -> GbdtModel:
        reader = _Reader(data)
        reader.header(MODEL_MAGIC)
        tree_count, max_depth, feature_count = reader.unpack("<III")
        if max_depth > MAX_TREE_DEPTH:
            raise CorruptPayload(f"max depth {max_depth} exceeds {MAX_TREE_DEPTH}")
        shrinkage, lambda_, base_score = reader.unpack("<ddd")
        (version_length,) = reader.unpack("<I")
        try:
            version = reader.take(version_length).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptPayload("model version is not UTF-8") from None
        if tree_count * 9 > reader.remaining:
            raise CorruptPayload(f"{tree_count} trees do not fit the payload")
        if not all(math.isfinite(v) for v in (shrinkage, lambda_, base_score)):
            raise CorruptPayload("non-finite model header")
        trees = []
        for _ in range(tree_count):
            nodes: list = []
            ModelRepository._decode_node(reader, nodes, 0, max_depth, feature_count)
            trees.append(RegressionTree.from_nodes(nodes, max_depth))
        reader.finish()
        return GbdtModel(
            trees=trees,
            shrinkage=shrinkage,
            base_score=base_score,
            lambda_=lambda_,
            max_depth=max_depth,
            feature_count=feature_count,
            version=version,
        )

    @staticmethod
    def save(path: Path, model: GbdtModel) -> None:
        Path(path).write_bytes(ModelRepository.encode(model))
        logger.info("wrote %d-tree model %s to %s", len(model.trees), model.version, path)

    @staticmethod
    def load(path: Path) -> GbdtModel:
        return ModelRepository.decode(_read_file(path))


class CorpusRepository:
    """A directory of ``log-NNNNNN.json`` files plus a ``labels.csv`` manifest."""

    @staticmethod
    def write(out_dir: Path, logs: Sequence[CanonicalLog]) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        with open(out_dir / LABELS_FILE, "w", newline="", encoding="utf-8") as manifest:
            writer = csv.writer(manifest, lineterminator="\n")
            writer.writerow(["file", "label"])
            for index, log in enumerate(logs, start=1):
                path = out_dir / f"log-{index:06d}.json"
                path.write_bytes(serialize_log(log))
                writer.writerow([path.name, log.label.value if log.label else ""])
                paths.append(path)
        logger.info("wrote %d logs to %s", len(paths), out_dir)
        return paths

    @staticmethod
    def read_labels(corpus_dir: Path) -> dict:
        path = Path(corpus_dir) / LABELS_FILE
        if not path.exists():
            return {}
        with open(path, newline="", encoding="utf-8") as manifest:
            return {row["file"]: row["label"] for row in csv.DictReader(manifest) if row.get("label")}

    @staticmethod
    def read(corpus_dir: Path, max_bytes: Optional[int] = None) -> List[Tuple[str, CanonicalLog]]:
        """Parse every ``*.json`` log in name order.

        A log without a label of its own takes the label listed in the
        manifest.
        """
        corpus_dir = Path(corpus_dir)
        if not corpus_dir.is_dir():
            raise FileNotFoundError(f"corpus directory {corpus_dir} does not exist")
        labels = CorpusRepository.read_labels(corpus_dir)
        logs = []
        dirty = 0
        for path in sorted(corpus_dir.glob("*.json")):
            kwargs = {"max_bytes": max_bytes} if max_bytes else {}
            try:
                log, report = parse_log(path.read_bytes(), **kwargs)
            except LogParseError as exc:
                raise type(exc)(f"{path.name}: {exc.message}") from exc
            if not report.is_empty:
                dirty += 1
            if log.label is None and path.name in labels:
                log = log.model_copy(update={"label": Label(labels[path.name])})
            logs.append((path.name, log))
        if dirty:
            logger.info("%d of %d logs needed cleaning", dirty, len(logs))
        return logs


class VectorDatasetRepository:
    """CSV of pooled log vectors: header ``label,v0..v191``, one row per log."""

    @staticmethod
    def save(path: Path, X: np.ndarray, y: Sequence[int]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["label"] + [f"v{i}" for i in range(X.shape[1])])
            for label, row in zip(y, X):
                writer.writerow([int(label)] + [repr(float(value)) for value in row])

    @staticmethod
    def load(path: Path) -> Tuple[np.ndarray, np.ndarray]:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[0] != "label":
                raise ValueError(f"{path} is not a vector dataset")
            rows = [[float(value) for value in row] for row in reader if row]
        if not rows:
            return np.zeros((0, len(header) - 1)), np.zeros(0, dtype=np.int64)
        data = np.array(rows, dtype=np.float64)
        return data[:, 1:], data[:, 0].astype(np.int64)


class AuditLogRepository:
    """Append-only JSON-lines audit log shared by concurrent requests."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line)

    def read_all(self) -> List[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]

