import logging
import time
import uuid
from typing import Optional

from src.domain.errors import ModelLoadFailure
from src.domain.gbdt import classify, predict
from src.domain.logmodel import DEFAULT_MAX_LOG_BYTES, parse_log
from src.domain.models import FEATURE_COUNT, EmbeddingModel, GbdtModel
from src.domain.schemas import CanonicalLog, DetectionResult
from src.domain.tokenizer import tokenize
from src.domain.vectorizer import vectorize_log
from src.infra.repositories import AuditLogRepository, EmbeddingRepository, ModelRepository
from src.infra.settings import DEFAULT_THRESHOLD, DetectorSettings

logger = logging.getLogger(__name__)


class Detector:
    """A loaded embedding/classifier pair that scores raw logs.

    The models are never mutated after construction, so one instance is
    shared by every request thread.
    """

    def __init__(self, embeddings: EmbeddingModel, model: GbdtModel, threshold: float = DEFAULT_THRESHOLD,
                 max_log_bytes: int = DEFAULT_MAX_LOG_BYTES, audit: Optional[AuditLogRepository] = None):
        if model.feature_count != FEATURE_COUNT:
            raise ModelLoadFailure(f"classifier expects {model.feature_count} features, logs have {FEATURE_COUNT}")
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        self.embeddings = embeddings
        self.model = model
        self.threshold = threshold
        self.max_log_bytes = max_log_bytes
        self.audit = audit

    @classmethod
    def load(cls, settings: DetectorSettings, audit: bool = True) -> "Detector":
        if settings.embeddings_path is None or settings.model_path is None:
            raise ModelLoadFailure("both an embeddings file and a model file are required")
        embeddings = EmbeddingRepository.load(settings.embeddings_path)
        model = ModelRepository.load(settings.model_path)
        logger.info("loaded %d-token embeddings and model %s", len(embeddings.vocab), model.version)
        audit_log = AuditLogRepository(settings.audit_log_path) if audit and settings.audit_log_path else None
        return cls(embeddings, model, settings.threshold, settings.max_log_bytes, audit_log)

    @property
    def model_version(self) -> str:
        return self.model.version

    def score(self, log: CanonicalLog) -> float:
        return predict(self.model, vectorize_log(tokenize(log), self.embeddings))

    def detect(self, raw: bytes, request_id: Optional[str] = None) -> DetectionResult:
        """Parse, score and classify one raw log; raises ``LogParseError`` on bad input."""
        started = time.perf_counter()
        log, report = parse_log(raw, self.max_log_bytes)
        score = self.score(log)
        result = DetectionResult(
            score=score,
            verdict=classify(score, self.threshold),
            threshold=self.threshold,
            model_version=self.model_version,
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )
        if self.audit is not None:
            self.audit.append({
                "request_id": request_id or uuid.uuid4().hex,
                "bytes": len(raw),
                "cleaned_fields": report.dropped_count + report.normalized_count,
                "score": result.score,
                "verdict": result.verdict.value,
                "model_version": result.model_version,
                "at": time.time(),
            })
        return result
