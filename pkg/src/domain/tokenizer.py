"""Turn a canonical log into six groups of "words", one per pooling group."""
import re
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import List, Optional, Tuple

from src.domain.schemas import CanonicalLog

WORD_BYTES = 4
_WHITESPACE = re.compile(r"\s+")
_PAGE_MASK = ~0xFFF


class GroupId(IntEnum):
    STACK = 0
    REGISTERS = 1
    OPCODES = 2
    MODULES = 3
    RESOURCES = 4
    PROCESS_META = 5


GROUP_COUNT = len(GroupId)


class FieldKind(str, Enum):
    TEXT = "text"
    PATH = "path"
    ADDRESS = "address"


@dataclass(frozen=True)
class GroupedTokens:
    groups: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.groups) != GROUP_COUNT:
            raise ValueError(f"expected {GROUP_COUNT} token groups, got {len(self.groups)}")

    def __getitem__(self, group: GroupId) -> Tuple[str, ...]:
        return self.groups[group]

    @classmethod
    def empty(cls) -> "GroupedTokens":
        return cls(tuple(() for _ in GroupId))

    def all_tokens(self):
        for group in self.groups:
            yield from group


def canonicalize_value(raw: str, kind: FieldKind = FieldKind.TEXT) -> str:
    """Normalize one field value into a vocabulary word.

    Addresses lose their low 12 bits so per-run ASLR jitter within a page maps
    to the same word; paths keep only their basename.
    """
    value = raw.strip()
    if kind == FieldKind.ADDRESS:
        try:
            address = int(value, 0)
        except ValueError:
            address = None
        if address is not None and address >= 0:
            return hex(address & _PAGE_MASK)
    if kind == FieldKind.PATH:
        value = re.split(r"[\\/]", value)[-1]
    return _WHITESPACE.sub("_", value.lower())


def hex_words(hex_bytes: Optional[str]) -> List[str]:
    if not hex_bytes:
        return []
    width = WORD_BYTES * 2
    text = hex_bytes.lower()
    return [text[i:i + width] for i in range(0, len(text), width)]


def _keep(tokens):
    return [token for token in tokens if token]


def _scalar(name: str, value) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, bool):
        value = str(value).lower()
    if isinstance(value, float):
        value = f"{value:.1f}"
    return canonicalize_value(f"{name}={value}")


def _command_line(command_line: Optional[str]) -> List[str]:
    if not command_line:
        return []
    return [canonicalize_value(part) for part in command_line.split()]


def _memory_block(block: str) -> str:
    """``kind:address`` with the address page-bucketed."""
    kind, sep, address = block.rpartition(":")
    if not sep:
        return canonicalize_value(block, FieldKind.ADDRESS)
    return f"{canonicalize_value(kind)}:{canonicalize_value(address, FieldKind.ADDRESS)}"


def tokenize(log: CanonicalLog) -> GroupedTokens:
    meta = log.metadata
    runtime = log.runtime

    stack = [canonicalize_value(frame) for frame in runtime.stack_trace]
    stack += hex_words(runtime.stack_snapshot)
    stack += [_memory_block(block) for block in runtime.process_blocks]

    registers = [
        f"{canonicalize_value(name)}={canonicalize_value(value, FieldKind.ADDRESS)}"
        for name, value in sorted(runtime.registers.items())
    ]
    if runtime.eflags:
        registers.append(f"eflags={canonicalize_value(runtime.eflags)}")

    opcodes = []
    for _, snippet in sorted(runtime.register_snippets.items()):
        opcodes += hex_words(snippet)
    for access in runtime.illegal_accesses:
        opcodes += hex_words(access.bytes)

    modules = [canonicalize_value(module.path, FieldKind.PATH)
               for module in runtime.loaded_modules if module.path]
    if runtime.import_table_hash:
        modules.append(canonicalize_value(runtime.import_table_hash))

    resources = [canonicalize_value(entry.path, FieldKind.PATH)
                 for entry in runtime.loaded_resources + runtime.opened_resources if entry.path]
    resources += [canonicalize_value(item.magic_type) for item in runtime.embedded_files if item.magic_type]
    for values in (runtime.found_urls, runtime.found_ips, runtime.scheduled_tasks, runtime.hklm_run_entries):
        resources += [canonicalize_value(value) for value in values]
    resources += [canonicalize_value(f"{attempt.key}={attempt.result}")
                  for attempt in runtime.registry_attempts if attempt.key and attempt.result]

    process = []
    if meta.exe_name:
        process.append(canonicalize_value(meta.exe_name, FieldKind.PATH))
    for value in (meta.exe_hash, meta.os_name):
        if value:
            process.append(canonicalize_value(value))
    for value in (meta.integrity_level, meta.privilege_level, meta.exe_arch):
        if value is not None:
            process.append(canonicalize_value(value.value))
    process += _command_line(runtime.command_line)
    parent = runtime.parent_process
    if parent is not None:
        if parent.path:
            process.append(canonicalize_value(parent.path, FieldKind.PATH))
        if parent.hash:
            process.append(canonicalize_value(parent.hash))
        if parent.integrity_level is not None:
            process.append(canonicalize_value(parent.integrity_level.value))
        process += _command_line(parent.command_line)
    injector = runtime.injector
    if injector is not None:
        if injector.path:
            process.append(canonicalize_value(injector.path, FieldKind.PATH))
        if injector.hash:
            process.append(canonicalize_value(injector.hash))
    if runtime.signature:
        process.append(canonicalize_value(runtime.signature))
    if log.pe is not None:
        for name, value in log.pe:
            if isinstance(value, list):
                continue
            process.append(_scalar(name, value))

    return GroupedTokens(tuple(
        tuple(_keep(group))
        for group in (stack, registers, opcodes, modules, resources, process)
    ))
