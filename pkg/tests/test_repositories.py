import struct

import numpy as np
import pytest

from src.domain.errors import BadMagic, CorruptPayload, ModelLoadFailure, NotJson, VersionMismatch
from src.domain.logmodel import serialize_log
from src.domain.models import EMBEDDING_DIM, EmbeddingModel, GbdtModel, RegressionTree, Vocabulary
from src.domain.schemas import CanonicalLog, Label, MetadataBlock
from src.infra.repositories import (
    AuditLogRepository,
    CorpusRepository,
    EmbeddingRepository,
    ModelRepository,
    VectorDatasetRepository,
)


def random_embeddings(rng, size: int) -> EmbeddingModel:
    tokens = [f"tok-{i}-{'é' * (i % 3)}" for i in range(size)]
    vocab = Vocabulary(tokens, [int(f) for f in rng.integers(1, 10**12, size=size)], int(rng.integers(1, 5)))
    shape = (size, EMBEDDING_DIM)
    return EmbeddingModel(vocab, rng.normal(size=shape).astype(np.float32), rng.normal(size=shape).astype(np.float32))


def random_nodes(rng, depth: int, max_depth: int, feature_count: int, nodes: list) -> int:
    node_id = len(nodes)
    if depth == max_depth or rng.random() < 0.3:
        nodes.append({"value": float(rng.normal())})
        return node_id
    node = {"feature": int(rng.integers(0, feature_count)), "threshold": float(rng.normal())}
    nodes.append(node)
    node["left"] = random_nodes(rng, depth + 1, max_depth, feature_count, nodes)
    node["right"] = random_nodes(rng, depth + 1, max_depth, feature_count, nodes)
    return node_id


def random_model(rng) -> GbdtModel:
    max_depth = int(rng.integers(1, 7))
    feature_count = int(rng.integers(1, 200))
    trees = []
    for _ in range(int(rng.integers(0, 12))):
        nodes: list = []
        random_nodes(rng, 0, max_depth, feature_count, nodes)
        trees.append(RegressionTree.from_nodes(nodes, max_depth))
    return GbdtModel(trees=trees, shrinkage=float(rng.uniform(0.01, 1.0)), base_score=float(rng.normal()),
                     lambda_=float(rng.uniform(0.0, 3.0)), max_depth=max_depth, feature_count=feature_count,
                     version=f"gbdt-{int(rng.integers(0, 2**32)):016x}")


# embeddings file

def test_embedding_files_round_trip(rng):
    for _ in range(100):
        model = random_embeddings(rng, int(rng.integers(1, 40)))
        data = EmbeddingRepository.encode(model)
        decoded = EmbeddingRepository.decode(data)
        assert decoded == model
        assert decoded.vocab.min_count == model.vocab.min_count
        assert EmbeddingRepository.encode(decoded) == data


def test_trained_embeddings_round_trip_through_disk(trained, tmp_path):
    path = tmp_path / "embeddings.bin"
    EmbeddingRepository.save(path, trained["embeddings"])
    assert EmbeddingRepository.load(path) == trained["embeddings"]


def test_embedding_header_errors(rng):
    data = EmbeddingRepository.encode(random_embeddings(rng, 3))
    with pytest.raises(BadMagic):
        EmbeddingRepository.decode(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatch):
        EmbeddingRepository.decode(data[:4] + struct.pack("<I", 0) + data[8:])
    with pytest.raises(CorruptPayload):
        EmbeddingRepository.decode(data[:8] + struct.pack("<I", 16) + data[12:])


def test_truncated_embeddings_are_corrupt(rng):
    data = EmbeddingRepository.encode(random_embeddings(rng, 5))
    for cut in (8, 20, 30, len(data) // 2, len(data) - 1):
        with pytest.raises(CorruptPayload):
            EmbeddingRepository.decode(data[:cut])
    with pytest.raises(CorruptPayload):
        EmbeddingRepository.decode(data + b"\0")


# classifier file

def test_model_files_round_trip(rng):
    for _ in range(100):
        model = random_model(rng)
        data = ModelRepository.encode(model)
        decoded = ModelRepository.decode(data)
        assert decoded == model
        assert ModelRepository.encode(decoded) == data


def test_trained_model_round_trips_with_identical_scores(trained, tmp_path):
    path = tmp_path / "model.bin"
    model = trained["model"]
    ModelRepository.save(path, model)
    loaded = ModelRepository.load(path)
    assert loaded == model
    np.testing.assert_array_equal(loaded.raw_score(trained["X"]), model.raw_score(trained["X"]))


def test_model_header_errors(rng):
    data = ModelRepository.encode(random_model(rng))
    with pytest.raises(BadMagic):
        ModelRepository.decode(b"MLEB" + data[4:])
    with pytest.raises(VersionMismatch):
        ModelRepository.decode(data[:4] + struct.pack("<I", 2) + data[8:])


def test_corrupt_model_payloads():
    leaf_only = GbdtModel(trees=[RegressionTree.from_nodes([{"value": 0.5}], 2)], shrinkage=0.1,
                          base_score=0.0, lambda_=1.0, max_depth=2, feature_count=4, version="v")
    data = ModelRepository.encode(leaf_only)
    for cut in (10, len(data) - 1):
        with pytest.raises(CorruptPayload):
            ModelRepository.decode(data[:cut])
    with pytest.raises(CorruptPayload):
        ModelRepository.decode(data + b"\x01")
    with pytest.raises(CorruptPayload):
        ModelRepository.decode(data[:-9] + b"\x07" + data[-8:])
    with pytest.raises(CorruptPayload):
        ModelRepository.decode(data[:-8] + struct.pack("<d", float("nan")))

    split = GbdtModel(
        trees=[RegressionTree.from_nodes([{"feature": 3, "threshold": 0.0, "left": 1, "right": 2},
                                          {"value": 1.0}, {"value": -1.0}], 1)],
        shrinkage=0.1, base_score=0.0, lambda_=1.0, max_depth=1, feature_count=2, version="v",
    )
    with pytest.raises(CorruptPayload):
        ModelRepository.decode(ModelRepository.encode(split))


def test_missing_model_file(tmp_path):
    with pytest.raises(ModelLoadFailure):
        ModelRepository.load(tmp_path / "absent.bin")
    with pytest.raises(ModelLoadFailure):
        EmbeddingRepository.load(tmp_path / "absent.bin")


# corpus directories

def test_corpus_round_trip(corpus, tmp_path):
    paths = CorpusRepository.write(tmp_path / "corpus", corpus[:12])
    assert [p.name for p in paths] == [f"log-{i:06d}.json" for i in range(1, 13)]
    labels = CorpusRepository.read_labels(tmp_path / "corpus")
    assert labels["log-000001.json"] == corpus[0].label.value
    read = CorpusRepository.read(tmp_path / "corpus")
    assert [log for _, log in read] == corpus[:12]


def test_manifest_fills_missing_labels(tmp_path):
    (tmp_path / "a.json").write_bytes(serialize_log(CanonicalLog(metadata=MetadataBlock(exe_name="a.exe"))))
    (tmp_path / "labels.csv").write_text("file,label\na.json,Malicious\n")
    [(name, log)] = CorpusRepository.read(tmp_path)
    assert name == "a.json"
    assert log.label == Label.MALICIOUS


def test_unparseable_corpus_file_names_the_file(tmp_path):
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(NotJson, match="bad.json"):
        CorpusRepository.read(tmp_path)
    with pytest.raises(FileNotFoundError):
        CorpusRepository.read(tmp_path / "missing")


# vectors and audit

def test_vector_dataset_round_trip(rng, tmp_path):
    X = rng.normal(size=(6, 192))
    y = np.array([1, 0, 1, 1, 0, 0])
    VectorDatasetRepository.save(tmp_path / "vectors.csv", X, y)
    loaded_X, loaded_y = VectorDatasetRepository.load(tmp_path / "vectors.csv")
    np.testing.assert_array_equal(loaded_X, X)
    np.testing.assert_array_equal(loaded_y, y)


def test_audit_log_appends_json_lines(tmp_path):
    audit = AuditLogRepository(tmp_path / "audit.jsonl")
    assert audit.read_all() == []
    audit.append({"request_id": "a", "score": 0.5})
    audit.append({"request_id": "b", "score": 0.9})
    assert [record["request_id"] for record in audit.read_all()] == ["a", "b"]
