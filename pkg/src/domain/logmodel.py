"""Canonical runtime-log parsing, cleaning, serialization and anonymization.

Logs arrive as JSON documents. ``parse_log`` walks the pydantic schema in
``src.domain.schemas`` field by field instead of handing the raw document to
pydantic directly, so that a wrong-typed value costs only that value: it is
dropped and recorded in the ``CleaningReport`` while the rest of the log
survives.
"""
import codecs
import hashlib
import hmac
import json
import logging
import math
import re
from enum import Enum
from typing import Annotated, Any, List, Tuple, Union, get_args, get_origin

from pydantic import BaseModel, ValidationError
from pydantic.fields import FieldInfo

from src.domain.errors import EmptyDocument, NotJson, OversizeLog
from src.domain.schemas import AnonymizedBlock, CanonicalLog, CleaningReport, PeBlock, PeType

logger = logging.getLogger(__name__)

DEFAULT_MAX_LOG_BYTES = 500 * 1024

_DROP = object()
_MISSING = object()
_SURROGATES = re.compile("[\ud800-\udfff]")


class _Cleaner:
    def __init__(self):
        self.dropped: List[str] = []
        self.normalized: List[str] = []

    def clean_model(self, model_cls, raw: dict, path: str) -> dict:
        out = {}
        for name, info in model_cls.model_fields.items():
            key = info.alias or name
            if key not in raw:
                continue
            field_path = f"{path}.{key}" if path else key
            value = self.clean_value(raw[key], info.annotation, list(info.metadata), field_path)
            if value is not _DROP and value is not _MISSING:
                out[name] = value
        if model_cls is PeBlock:
            self._reconcile_pe(out, path)
        return out

    def clean_value(self, value: Any, annotation: Any, constraints: list, path: str) -> Any:
        origin = get_origin(annotation)

        if origin is Annotated:
            base, *meta = get_args(annotation)
            return self.clean_value(value, base, constraints + _expand(meta), path)

        if origin is Union:
            if value is None:
                return None
            inner = [arg for arg in get_args(annotation) if arg is not type(None)]
            return self.clean_value(value, inner[0], constraints, path)

        if value is None:
            return _MISSING

        if origin is list:
            if not isinstance(value, list):
                return self._drop(path)
            (item_type,) = get_args(annotation)
            items = []
            for index, item in enumerate(value):
                cleaned = self.clean_value(item, item_type, [], f"{path}[{index}]")
                if cleaned is _MISSING:
                    self._drop(f"{path}[{index}]")
                elif cleaned is not _DROP:
                    items.append(cleaned)
            return items

        if origin is dict:
            if not isinstance(value, dict):
                return self._drop(path)
            _, value_type = get_args(annotation)
            entries = {}
            for key, item in value.items():
                if _SURROGATES.search(key):
                    self._drop(f"{path}.{_SURROGATES.sub('?', key)}")
                    continue
                cleaned = self.clean_value(item, value_type, [], f"{path}.{key}")
                if cleaned is _MISSING:
                    self._drop(f"{path}.{key}")
                elif cleaned is not _DROP:
                    entries[key] = cleaned
            return entries

        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            if not isinstance(value, dict):
                return self._drop(path)
            return self.clean_model(annotation, value, path)

        if isinstance(annotation, type) and issubclass(annotation, Enum):
            return self._clean_enum(value, annotation, path)

        if annotation is bool:
            return value if isinstance(value, bool) else self._drop(path)

        if annotation is int:
            if isinstance(value, bool) or not isinstance(value, int):
                return self._drop(path)
            return self._clamp(value, constraints, path)

        if annotation is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                return self._drop(path)
            if isinstance(value, float) and not math.isfinite(value):
                return self._drop(path)
            try:
                number = float(value)
            except OverflowError:
                # integer beyond the float range
                number = math.inf if value > 0 else -math.inf
            number = self._clamp(number, constraints, path)
            return float(number) if math.isfinite(number) else self._drop(path)

        if annotation is str:
            if not isinstance(value, str):
                return self._drop(path)
            return self._clean_str(value, constraints, path)

        return self._drop(path)

    def _clean_enum(self, value, enum_cls, path):
        if not isinstance(value, str):
            return self._drop(path)
        for member in enum_cls:
            if member.value == value:
                return member.value
        for member in enum_cls:
            if member.value.lower() == value.lower():
                self.normalized.append(path)
                return member.value
        return self._drop(path)

    def _clamp(self, value, constraints, path):
        low = _constraint(constraints, "ge")
        high = _constraint(constraints, "le")
        if low is not None and value < low:
            self.normalized.append(path)
            return type(value)(low)
        if high is not None and value > high:
            self.normalized.append(path)
            return type(value)(high)
        return value

    def _clean_str(self, value, constraints, path):
        original = value
        # lone surrogates cannot be encoded as UTF-8
        value = _SURROGATES.sub("\ufffd", value)
        pattern = _constraint(constraints, "pattern")
        if pattern is not None and not re.fullmatch(pattern, value):
            value = value.lower()
            if not re.fullmatch(pattern, value):
                return self._drop(path)
        max_length = _constraint(constraints, "max_length")
        if max_length is not None and len(value) > max_length:
            value = value[:max_length]
        if value != original:
            self.normalized.append(path)
        return value

    def _reconcile_pe(self, out: dict, path: str):
        sections = out.get("sections")
        if "section_count" in out and out["section_count"] != len(sections or []):
            out["section_count"] = len(sections or [])
            self.normalized.append(f"{path}.section_count")
        pe_type = out.get("pe_type")
        arch = out.get("arch")
        if pe_type is not None and arch is not None:
            expected = "X86" if pe_type == PeType.PE32.value else "X64"
            if arch != expected:
                out["arch"] = expected
                self.normalized.append(f"{path}.arch")

    def _drop(self, path: str):
        self.dropped.append(path)
        return _DROP


def _expand(meta) -> list:
    expanded = []
    for item in meta:
        if isinstance(item, FieldInfo):
            expanded.extend(item.metadata)
        else:
            expanded.append(item)
    return expanded


def _constraint(constraints: list, name: str):
    for item in constraints:
        value = getattr(item, name, None)
        if value is not None:
            return value
    return None


def _strip_trailing_commas(text: str) -> Tuple[str, int]:
    out = []
    removed = 0
    in_string = False
    escaped = False
    length = len(text)
    for index, char in enumerate(text):
        if in_string:
            out.append(char)
            if escaped:
                escaped = False
            elif char == "\\":
                escaped = True
            elif char == '"':
                in_string = False
            continue
        if char == '"':
            in_string = True
        elif char == ",":
            ahead = index + 1
            while ahead < length and text[ahead] in " \t\r\n":
                ahead += 1
            if ahead < length and text[ahead] in "}]":
                removed += 1
                continue
        out.append(char)
    return "".join(out), removed


def _decode_document(raw: bytes, max_bytes: int) -> Tuple[dict, int]:
    if len(raw) > max_bytes:
        raise OversizeLog(f"log is {len(raw)} bytes, cap is {max_bytes}")
    repairs = 0
    if raw.startswith(codecs.BOM_UTF8):
        raw = raw[len(codecs.BOM_UTF8):]
        repairs += 1
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise NotJson(f"log is not UTF-8: {exc}") from None
    if not text.strip():
        raise EmptyDocument("log document is empty")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        repaired, removed = _strip_trailing_commas(text)
        if not removed:
            raise NotJson(f"invalid JSON: {exc}") from None
        try:
            document = json.loads(repaired)
        except (ValueError, RecursionError) as retry_exc:
            raise NotJson(f"invalid JSON: {retry_exc}") from None
        repairs += removed
    except RecursionError:
        raise NotJson("JSON nesting too deep") from None
    except ValueError as exc:
        # integers past the interpreter digit limit
        raise NotJson(f"invalid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise NotJson("top-level JSON value must be an object")
    return document, repairs


def parse_log(raw: bytes, max_bytes: int = DEFAULT_MAX_LOG_BYTES) -> Tuple[CanonicalLog, CleaningReport]:
    """Parse and clean one JSON runtime log.

    Wrong-typed values are dropped, out-of-range numbers are clamped to the
    nearest bound, unknown fields are ignored and missing ones stay empty.
    Raises ``NotJson``, ``OversizeLog`` or ``EmptyDocument``; nothing else.
    """
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    document, repairs = _decode_document(raw, max_bytes)
    cleaner = _Cleaner()
    cleaned = cleaner.clean_model(CanonicalLog, document, "")
    try:
        log = CanonicalLog.model_validate(cleaned)
    except ValidationError as exc:
        logger.warning("cleaned log still fails validation: %s", exc)
        raise NotJson("log does not fit the canonical schema") from None
    report = CleaningReport(
        dropped_fields=cleaner.dropped,
        normalized_fields=cleaner.normalized,
        parse_repairs=repairs,
    )
    if not report.is_empty:
        logger.debug("cleaned log: %d dropped, %d normalized, %d repairs",
                     report.dropped_count, report.normalized_count, report.parse_repairs)
    return log, report


def serialize_log(log: CanonicalLog) -> bytes:
    document = log.model_dump(mode="json")
    return json.dumps(document, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"), allow_nan=False).encode("utf-8")


def validate_log(log: CanonicalLog) -> List[str]:
    """Return the paths of every value in ``log`` that breaks the schema."""
    cleaner = _Cleaner()
    cleaner.clean_model(CanonicalLog, log.model_dump(mode="json"), "")
    return cleaner.dropped + cleaner.normalized


def _salt_tag(salt: bytes) -> str:
    return hmac.new(salt, b"memlog-pseudonym", hashlib.sha256).hexdigest()[:8]


def pseudonym(value: str, salt: bytes) -> str:
    tag = _salt_tag(salt)
    if value.startswith(f"anon-{tag}-"):
        return value
    digest = hmac.new(salt, value.encode("utf-8"), hashlib.sha256).hexdigest()[:20]
    return f"anon-{tag}-{digest}"


def anonymize(log: CanonicalLog, salt: bytes) -> CanonicalLog:
    """Replace every identifying field with a keyed-hash pseudonym."""
    current = log.anonymized.model_dump()
    replaced = {
        name: pseudonym(value, salt) if value else value
        for name, value in current.items()
    }
    if replaced == current:
        return log
    return log.model_copy(update={"anonymized": AnonymizedBlock(**replaced)})
