import os
from pathlib import Path
from typing import Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from src.domain.logmodel import DEFAULT_MAX_LOG_BYTES

DEFAULT_THRESHOLD = 0.75
DEFAULT_BIND = "127.0.0.1:8000"

ENVIRONMENT = {
    "bind": "MEMLOG_BIND",
    "embeddings_path": "MEMLOG_EMBEDDINGS",
    "model_path": "MEMLOG_MODEL",
    "threshold": "MEMLOG_THRESHOLD",
    "audit_log_path": "MEMLOG_AUDIT_LOG",
}


class DetectorSettings(BaseModel):
    bind: str = DEFAULT_BIND
    embeddings_path: Optional[Path] = None
    model_path: Optional[Path] = None
    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0.0, lt=1.0)
    audit_log_path: Optional[Path] = Path("audit.jsonl")
    max_log_bytes: int = Field(default=DEFAULT_MAX_LOG_BYTES, gt=0)

    @field_validator("bind")
    @classmethod
    def check_bind(cls, value: str) -> str:
        host, sep, port = value.rpartition(":")
        if not sep or not host or not port.isdigit() or not 0 <= int(port) <= 65535:
            raise ValueError("bind must look like HOST:PORT")
        return value

    @property
    def address(self) -> Tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        return host.strip("[]"), int(port)

    @classmethod
    def load(cls, **values) -> "DetectorSettings":
        """Settings from explicit values, then ``MEMLOG_*`` environment overrides.

        ``None`` values are ignored so unset command-line flags keep the
        defaults.
        """
        merged = {name: value for name, value in values.items() if value is not None}
        for name, variable in ENVIRONMENT.items():
            value = os.getenv(variable)
            if value:
                merged[name] = value
        return cls(**merged)
