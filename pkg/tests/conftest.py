import numpy as np
import pytest

from src.domain.embedding import build_vocab, train_embeddings
from src.domain.gbdt import train_classifier
from src.domain.schemas import EmbeddingParams, GbdtParams, GenSpec
from src.domain.synthgen import generate_corpus
from src.domain.tokenizer import tokenize
from src.domain.vectorizer import vectorize_corpus
from src.infra.detector import Detector
from src.infra.repositories import AuditLogRepository, EmbeddingRepository, ModelRepository

SMALL_EMBEDDING = EmbeddingParams(window=3, negatives=3, epochs=2, min_count=2, seed=3)
SMALL_GBDT = GbdtParams(trees=30, max_depth=3, shrinkage=0.3, min_leaf=2)


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(GenSpec(n_malicious=60, n_benign=60, overlap=0.0, seed=11))


@pytest.fixture(scope="session")
def trained(corpus):
    """Embeddings, feature matrix and classifier fitted on the small corpus."""
    tokens = [tokenize(log) for log in corpus]
    vocab = build_vocab(tokens, SMALL_EMBEDDING.min_count)
    embeddings = train_embeddings(tokens, vocab, SMALL_EMBEDDING)
    X, y = vectorize_corpus(corpus, embeddings)
    model = train_classifier(X, y, SMALL_GBDT)
    return {"embeddings": embeddings, "model": model, "X": X, "y": y}


@pytest.fixture(scope="session")
def model_files(trained, tmp_path_factory):
    directory = tmp_path_factory.mktemp("models")
    embeddings_path = directory / "embeddings.bin"
    model_path = directory / "model.bin"
    EmbeddingRepository.save(embeddings_path, trained["embeddings"])
    ModelRepository.save(model_path, trained["model"])
    return embeddings_path, model_path


@pytest.fixture
def detector(trained, tmp_path):
    return Detector(trained["embeddings"], trained["model"], audit=AuditLogRepository(tmp_path / "audit.jsonl"))


@pytest.fixture
def rng():
    return np.random.default_rng(20190101)
