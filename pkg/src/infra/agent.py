"""Endpoint agent: ship log files from a watch directory to the detector.

The agent is a single-threaded polling loop. It only imports the standard
library, ``requests`` and the error classes so that it stays small enough to
run beside the monitored applications.
"""
import json
import logging
import os
import signal
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set

import requests

from src.domain.errors import DispatchFailure, WatchDirMissing

logger = logging.getLogger(__name__)

RESULTS_FILE = "detections.jsonl"
PROCESSED_DIR = "processed"
FAILED_DIR = "failed"
DETECT_PATH = "/v1/detect"


@dataclass
class AgentSettings:
    watch_dir: Path
    server_url: str = "http://127.0.0.1:8000"
    poll_interval_ms: int = 1000
    max_attempts: int = 3
    backoff_base_ms: int = 200
    results_path: Optional[Path] = None
    request_timeout_s: float = 10.0
    exit_when_idle: bool = False

    def __post_init__(self):
        self.watch_dir = Path(self.watch_dir)
        if self.results_path is None:
            self.results_path = self.watch_dir / RESULTS_FILE
        self.results_path = Path(self.results_path)
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.poll_interval_ms < 0 or self.backoff_base_ms < 0:
            raise ValueError("intervals cannot be negative")

    def with_environment(self) -> "AgentSettings":
        server = os.getenv("MEMLOG_SERVER")
        if server:
            self.server_url = server
        return self


@dataclass
class AgentStats:
    processed: int = 0
    failed: int = 0
    requests: int = 0
    failures: Dict[str, str] = field(default_factory=dict)


class LogAgent:
    def __init__(self, settings: AgentSettings, session: Optional[requests.Session] = None):
        self.settings = settings
        self.session = session or requests.Session()
        self.stats = AgentStats()
        self._stopping = False
        # files that could be moved neither to processed/ nor failed/
        self._stuck: Set[str] = set()
        self._url = settings.server_url.rstrip("/") + DETECT_PATH

    @property
    def processed_dir(self) -> Path:
        return self.settings.watch_dir / PROCESSED_DIR

    @property
    def failed_dir(self) -> Path:
        return self.settings.watch_dir / FAILED_DIR

    def stop(self, *_):
        self._stopping = True

    def _install_signal_handlers(self) -> dict:
        previous = {}
        for signum in (signal.SIGINT, signal.SIGTERM):
            try:
                previous[signum] = signal.signal(signum, self.stop)
            except ValueError:
                # not the main thread
                break
        return previous

    def pending_files(self) -> List[Path]:
        return sorted(path for path in self.settings.watch_dir.glob("*.json") if path.name not in self._stuck)

    def _sleep(self, seconds: float):
        deadline = time.monotonic() + seconds
        while not self._stopping:
            left = deadline - time.monotonic()
            if left <= 0:
                return
            time.sleep(min(left, 0.1))

    def dispatch(self, body: bytes, request_id: str) -> dict:
        """POST one log, retrying connection errors and 5xx replies with
        exponential backoff. A 4xx reply is final."""
        headers = {"Content-Type": "application/json", "X-Request-ID": request_id}
        reason = ""
        for attempt in range(1, self.settings.max_attempts + 1):
            self.stats.requests += 1
            try:
                response = self.session.post(self._url, data=body, headers=headers,
                                             timeout=self.settings.request_timeout_s)
            except requests.RequestException as exc:
                reason = f"{type(exc).__name__}: {exc}"
            else:
                if response.status_code < 300:
                    try:
                        return response.json()
                    except ValueError:
                        raise DispatchFailure("detector reply is not JSON") from None
                if response.status_code < 500:
                    raise DispatchFailure(f"detector rejected the log: HTTP {response.status_code} {response.text[:200]}")
                reason = f"HTTP {response.status_code}"
            if attempt < self.settings.max_attempts:
                delay = self.settings.backoff_base_ms * 2 ** (attempt - 1) / 1000.0
                logger.debug("attempt %d for %s failed (%s), retrying in %.2fs", attempt, request_id, reason, delay)
                self._sleep(delay)
        raise DispatchFailure(f"gave up after {self.settings.max_attempts} attempts: {reason}")

    def _move(self, path: Path, target_dir: Path) -> Path:
        target = target_dir / path.name
        suffix = 1
        while target.exists():
            target = target_dir / f"{path.stem}.{suffix}{path.suffix}"
            suffix += 1
        os.replace(path, target)
        return target

    def _record(self, file_name: str, result: dict):
        line = json.dumps({"file": file_name, **result}, sort_keys=True, separators=(",", ":"))
        with open(self.settings.results_path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def _quarantine(self, path: Path, reason: str):
        logger.warning("quarantined %s: %s", path.name, reason)
        self.stats.failed += 1
        self.stats.failures[path.name] = reason
        try:
            self._move(path, self.failed_dir)
        except OSError as exc:
            logger.error("cannot move %s to %s: %s", path.name, self.failed_dir, exc)
            self._stuck.add(path.name)

    def process_file(self, path: Path) -> bool:
        try:
            body = path.read_bytes()
        except OSError as exc:
            self._quarantine(path, f"unreadable: {exc}")
            return False
        try:
            result = self.dispatch(body, path.name)
        except DispatchFailure as exc:
            self._quarantine(path, exc.message)
            return False
        try:
            self._record(path.name, result)
            self._move(path, self.processed_dir)
        except OSError as exc:
            self._quarantine(path, f"cannot store result: {exc}")
            return False
        self.stats.processed += 1
        logger.info("%s: %s (score %s)", path.name, result.get("verdict"), result.get("score"))
        return True

    def run(self) -> AgentStats:
        watch_dir = self.settings.watch_dir
        if not watch_dir.is_dir():
            raise WatchDirMissing(f"watch directory {watch_dir} does not exist")
        self.processed_dir.mkdir(exist_ok=True)
        self.failed_dir.mkdir(exist_ok=True)
        previous = self._install_signal_handlers()
        logger.info("watching %s, sending to %s", watch_dir, self._url)
        try:
            while not self._stopping:
                pending = self.pending_files()
                for path in pending:
                    if self._stopping:
                        break
                    self.process_file(path)
                if not pending:
                    if self.settings.exit_when_idle:
                        break
                    self._sleep(self.settings.poll_interval_ms / 1000.0)
        finally:
            for signum, handler in previous.items():
                signal.signal(signum, handler)
        logger.info("agent stopped: %d processed, %d failed", self.stats.processed, self.stats.failed)
        return self.stats


def run_agent(settings: AgentSettings) -> AgentStats:
    return LogAgent(settings).run()
