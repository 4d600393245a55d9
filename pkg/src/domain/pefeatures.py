"""
PE header feature extraction.

Header-level static parsing of Portable Executable images with :mod:`struct`:
DOS header, PE signature, COFF header, optional header (PE32 / PE32+), section
table, import and export directories, the debug directory (for the PDB path)
and the security directory (signature presence). Relocations, resources, TLS
and certificates are not walked.

Every read is bounds-checked; malformed input surfaces as one of the
``PeParseError`` subclasses, never as an ``IndexError`` or ``struct.error``.
"""
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from src.domain.errors import (
    BadDataDirectory,
    BadDosMagic,
    BadPeSignature,
    EmptyInput,
    MalformedSectionTable,
    TruncatedHeader,
)
from src.domain.schemas import Arch, PeBlock, PeType, SectionEntry

logger = logging.getLogger(__name__)

MZ_MAGIC = b"MZ"
PE_MAGIC = b"PE\x00\x00"
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

IMAGE_FILE_MACHINE_I386 = 0x14C
IMAGE_FILE_MACHINE_AMD64 = 0x8664

DIRECTORY_EXPORT = 0
DIRECTORY_IMPORT = 1
DIRECTORY_SECURITY = 4
DIRECTORY_DEBUG = 6

IMAGE_DEBUG_TYPE_CODEVIEW = 2
CODEVIEW_RSDS = b"RSDS"

MAX_SECTIONS = 96
MAX_NAME_LENGTH = 256
DEFAULT_MAX_IMPORT_NAMES = 4096

COFF_HEADER = struct.Struct("<HHIIIHH")
SECTION_HEADER = struct.Struct("<8sIIIIIIHHI")
IMPORT_DESCRIPTOR = struct.Struct("<IIIII")
EXPORT_DIRECTORY = struct.Struct("<IIHHIIIIIII")
DEBUG_DIRECTORY = struct.Struct("<IIHHIIII")


class _Section:
    __slots__ = ("name", "virtual_size", "virtual_address", "raw_size", "raw_pointer", "characteristics")

    def __init__(self, name, virtual_size, virtual_address, raw_size, raw_pointer, characteristics):
        self.name = name
        self.virtual_size = virtual_size
        self.virtual_address = virtual_address
        self.raw_size = raw_size
        self.raw_pointer = raw_pointer
        self.characteristics = characteristics


def shannon_entropy(data: bytes) -> float:
    """Shannon entropy of ``data`` in bits per byte, in [0, 8]."""
    if not data:
        raise EmptyInput("entropy of an empty byte string is undefined")
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    probabilities = counts[counts > 0] / len(data)
    entropy = float(-np.sum(probabilities * np.log2(probabilities)))
    return min(8.0, max(0.0, entropy))


def _unpack(layout: struct.Struct, image: bytes, offset: int, error=TruncatedHeader) -> tuple:
    if offset < 0 or offset + layout.size > len(image):
        raise error(f"structure at offset {offset:#x} runs past the end of the image")
    return layout.unpack_from(image, offset)


def _read_u16(image: bytes, offset: int, error=TruncatedHeader) -> int:
    return _unpack(struct.Struct("<H"), image, offset, error)[0]


def _read_u32(image: bytes, offset: int, error=TruncatedHeader) -> int:
    return _unpack(struct.Struct("<I"), image, offset, error)[0]


def _read_u64(image: bytes, offset: int, error=TruncatedHeader) -> int:
    return _unpack(struct.Struct("<Q"), image, offset, error)[0]


def _read_cstring(image: bytes, offset: int) -> str:
    if offset < 0 or offset >= len(image):
        raise BadDataDirectory(f"string offset {offset:#x} outside the image")
    end = image.find(b"\x00", offset, offset + MAX_NAME_LENGTH)
    if end < 0:
        end = min(len(image), offset + MAX_NAME_LENGTH)
    return image[offset:end].decode("ascii", errors="replace")


def _rva_to_offset(rva: int, sections: List[_Section], size_of_headers: int, image_size: int) -> int:
    for section in sections:
        span = max(section.virtual_size, section.raw_size)
        if section.virtual_address <= rva < section.virtual_address + span:
            offset = rva - section.virtual_address + section.raw_pointer
            if offset >= image_size:
                break
            return offset
    if 0 <= rva < min(size_of_headers, image_size):
        return rva
    raise BadDataDirectory(f"RVA {rva:#x} does not map into the file")


def _parse_sections(image: bytes, table_offset: int, count: int) -> List[_Section]:
    if count > MAX_SECTIONS:
        raise MalformedSectionTable(f"{count} sections exceed the PE limit of {MAX_SECTIONS}")
    sections = []
    for index in range(count):
        fields = _unpack(SECTION_HEADER, image, table_offset + index * SECTION_HEADER.size,
                         MalformedSectionTable)
        raw_name, virtual_size, virtual_address, raw_size, raw_pointer = fields[:5]
        characteristics = fields[9]
        name = raw_name.rstrip(b"\x00").decode("latin-1")
        sections.append(_Section(name, virtual_size, virtual_address, raw_size, raw_pointer, characteristics))
    return sections


def _parse_imports(image, rva, sections, size_of_headers, is_plus, max_names) -> List[str]:
    names: List[str] = []
    offset = _rva_to_offset(rva, sections, size_of_headers, len(image))
    thunk_size = 8 if is_plus else 4
    ordinal_flag = 1 << 63 if is_plus else 1 << 31
    read_thunk = _read_u64 if is_plus else _read_u32
    for _ in range(max_names):
        original_first_thunk, _, _, name_rva, first_thunk = _unpack(
            IMPORT_DESCRIPTOR, image, offset, BadDataDirectory)
        if not (original_first_thunk or name_rva or first_thunk):
            break
        thunk_rva = original_first_thunk or first_thunk
        thunk_offset = _rva_to_offset(thunk_rva, sections, size_of_headers, len(image))
        while len(names) < max_names:
            thunk = read_thunk(image, thunk_offset, BadDataDirectory)
            if thunk == 0:
                break
            if thunk & ordinal_flag:
                names.append(f"#{thunk & 0xFFFF}")
            else:
                hint_offset = _rva_to_offset(thunk & 0x7FFFFFFF, sections, size_of_headers, len(image))
                names.append(_read_cstring(image, hint_offset + 2))
            thunk_offset += thunk_size
        if len(names) >= max_names:
            logger.warning("import name cap of %d reached, remaining imports skipped", max_names)
            break
        offset += IMPORT_DESCRIPTOR.size
    return names


def _parse_exports(image, rva, sections, size_of_headers, max_names) -> Tuple[int, List[str], Optional[str]]:
    offset = _rva_to_offset(rva, sections, size_of_headers, len(image))
    fields = _unpack(EXPORT_DIRECTORY, image, offset, BadDataDirectory)
    name_rva, _, number_of_functions, number_of_names, _, names_rva = fields[4:10]
    module_name = _read_cstring(image, _rva_to_offset(name_rva, sections, size_of_headers, len(image))) \
        if name_rva else None
    names = []
    if number_of_names:
        table = _rva_to_offset(names_rva, sections, size_of_headers, len(image))
        for index in range(min(number_of_names, max_names)):
            entry_rva = _read_u32(image, table + 4 * index, BadDataDirectory)
            names.append(_read_cstring(image, _rva_to_offset(entry_rva, sections, size_of_headers, len(image))))
    return min(number_of_functions, max_names), names, module_name


def _parse_pdb_path(image, rva, size, sections, size_of_headers) -> Optional[str]:
    offset = _rva_to_offset(rva, sections, size_of_headers, len(image))
    for index in range(size // DEBUG_DIRECTORY.size):
        fields = _unpack(DEBUG_DIRECTORY, image, offset + index * DEBUG_DIRECTORY.size, BadDataDirectory)
        debug_type, data_size, pointer = fields[4], fields[5], fields[7]
        if debug_type != IMAGE_DEBUG_TYPE_CODEVIEW or data_size < 24:
            continue
        if image[pointer:pointer + 4] != CODEVIEW_RSDS:
            continue
        return _read_cstring(image, pointer + 24)
    return None


def parse_pe(image: bytes, max_import_names: int = DEFAULT_MAX_IMPORT_NAMES) -> PeBlock:
    """Extract the PE-derived log features from a raw image.

    Import, export and debug directory problems degrade to empty values with a
    warning; header problems raise.
    """
    if len(image) < 64:
        raise TruncatedHeader(f"image is {len(image)} bytes, a DOS header needs 64")
    if image[:2] != MZ_MAGIC:
        raise BadDosMagic("image does not start with 'MZ'")

    pe_offset = _read_u32(image, 0x3C)
    if pe_offset + 4 > len(image):
        raise TruncatedHeader(f"e_lfanew {pe_offset:#x} points past the end of the image")
    if image[pe_offset:pe_offset + 4] != PE_MAGIC:
        raise BadPeSignature("missing 'PE\\0\\0' signature")

    coff_offset = pe_offset + 4
    machine, section_count, timestamp, _, _, optional_size, characteristics = _unpack(
        COFF_HEADER, image, coff_offset)

    optional_offset = coff_offset + COFF_HEADER.size
    magic = _read_u16(image, optional_offset)
    if magic == PE32_MAGIC:
        pe_type, arch, is_plus = PeType.PE32, Arch.X86, False
    elif magic == PE32PLUS_MAGIC:
        pe_type, arch, is_plus = PeType.PE32_PLUS, Arch.X64, True
    else:
        raise BadPeSignature(f"unknown optional header magic {magic:#x}")
    if machine not in (IMAGE_FILE_MACHINE_I386, IMAGE_FILE_MACHINE_AMD64):
        logger.warning("unexpected machine %#x, architecture taken from optional header", machine)
    elif (machine == IMAGE_FILE_MACHINE_AMD64) != is_plus:
        logger.warning("machine %#x disagrees with optional header magic %#x", machine, magic)

    entry_point = _read_u32(image, optional_offset + 16)
    size_of_headers = _read_u32(image, optional_offset + 60)
    directory_count_offset = optional_offset + (108 if is_plus else 92)
    directory_count = min(_read_u32(image, directory_count_offset), 16)
    directories = []
    for index in range(directory_count):
        entry_offset = directory_count_offset + 4 + index * 8
        if entry_offset + 8 > optional_offset + optional_size or entry_offset + 8 > len(image):
            break
        directories.append((_read_u32(image, entry_offset), _read_u32(image, entry_offset + 4)))

    sections = _parse_sections(image, optional_offset + optional_size, section_count)

    def directory(index):
        return directories[index] if index < len(directories) else (0, 0)

    import_names: List[str] = []
    import_rva, import_size = directory(DIRECTORY_IMPORT)
    if import_rva and import_size:
        try:
            import_names = _parse_imports(image, import_rva, sections, size_of_headers, is_plus, max_import_names)
        except BadDataDirectory as exc:
            logger.warning("import directory unreadable, import features left empty: %s", exc)
            import_names = []

    export_count, export_names, export_module = 0, [], None
    export_rva, export_size = directory(DIRECTORY_EXPORT)
    if export_rva and export_size:
        try:
            export_count, export_names, export_module = _parse_exports(
                image, export_rva, sections, size_of_headers, max_import_names)
        except BadDataDirectory as exc:
            logger.warning("export directory unreadable, export features left empty: %s", exc)
            export_count, export_names, export_module = 0, [], None

    pdb_path = None
    debug_rva, debug_size = directory(DIRECTORY_DEBUG)
    if debug_rva and debug_size:
        try:
            pdb_path = _parse_pdb_path(image, debug_rva, debug_size, sections, size_of_headers)
        except BadDataDirectory as exc:
            logger.warning("debug directory unreadable: %s", exc)

    _, security_size = directory(DIRECTORY_SECURITY)

    return PeBlock(
        pe_type=pe_type,
        section_count=len(sections),
        sections=[
            SectionEntry(name=s.name[:8], virtual_size=s.virtual_size, raw_size=s.raw_size,
                         characteristics=s.characteristics)
            for s in sections
        ],
        import_count=len(import_names),
        export_count=export_count,
        import_names=import_names,
        export_names=export_names,
        export_module_name=export_module,
        characteristics=characteristics,
        compile_timestamp=timestamp,
        signed=security_size > 0,
        arch=arch,
        entry_point_rva=entry_point,
        entropy_bits=shannon_entropy(image),
        file_size=len(image),
        pdb_path=pdb_path,
    )


def parse_pe_file(path: Union[str, Path], max_import_names: int = DEFAULT_MAX_IMPORT_NAMES) -> PeBlock:
    """``parse_pe`` on a file on disk, with its creation and modification times."""
    path = Path(path)
    info = path.stat()
    block = parse_pe(path.read_bytes(), max_import_names)
    return block.model_copy(update={
        "created": int(info.st_ctime * 1000),
        "modified": int(info.st_mtime * 1000),
    })
