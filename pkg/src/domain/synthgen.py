"""Seeded synthetic runtime-log corpora.

Every log is built from class-independent background fields plus a set of
indicator slots (stack frames, byte words, modules, resources, urls, tasks,
run keys and command-line flags). A benign log fills its slots from one
shared benign pool. A malicious log picks a malware family and fills each
slot from that family's pool, except that with probability ``overlap`` a slot
falls back to the benign pool. ``overlap=0`` keeps the class vocabularies
disjoint and ``overlap=1`` makes both classes draw from the same distribution.
"""
import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Union

from pydantic import ValidationError

from src.domain.errors import InvalidSpec
from src.domain.logmodel import validate_log
from src.domain.schemas import (
    AnonymizedBlock,
    CanonicalLog,
    EmbeddedFile,
    GenSpec,
    IllegalAccess,
    InjectorInfo,
    IntegrityLevel,
    Label,
    MetadataBlock,
    ModuleEntry,
    PeBlock,
    PeType,
    PrivilegeLevel,
    ProcessDescriptor,
    RegistryAttempt,
    ResourceEntry,
    RuntimeBlock,
    SectionEntry,
)

logger = logging.getLogger(__name__)

YEAR_START_MS = 1546300800000  # 2019-01-01T00:00:00Z
YEAR_END_MS = 1577836800000

MALWARE_FAMILIES = (
    "Adware", "Exploit Kit", "Keylogger", "Shellcode",
    "Fileless", "Vulnerability", "Banking Trojan", "Info Stealer",
    "Rootkit", "Code Injection", "Miner", "Backdoor",
    "Spyware", "Supply Chain", "Ransomware", "Trojan",
    "Virus", "Hacking Tool", "Worm", "Remote Code Execution",
)

HOST_EXECUTABLES = (
    "webex.exe", "gotomeeting.exe", "skype.exe", "slack.exe", "teams.exe", "teamviewer.exe", "zoom.exe",
    "acrord32.exe", "excel.exe", "word.exe", "powerpnt.exe", "msaccess.exe", "outlook.exe", "chrome.exe",
    "firefox.exe", "iexplore.exe", "msedge.exe", "vlc.exe", "7z.exe", "winrar.exe", "forticlient.exe",
    "taskeng.exe", "regsvr32.exe", "autoit3.exe", "java.exe", "python3.exe", "node.exe", "cscript.exe",
    "mshta.exe", "rundll32.exe", "wscript.exe", "powershell.exe", "cmd.exe",
)

OS_NAMES = (
    "Windows 10 Pro", "Windows 10 Enterprise", "Windows 10 Home", "Windows 8.1 Pro", "Windows 7 Professional",
    "Windows 7 Enterprise", "Windows Server 2016", "Windows Server 2019", "Windows Server 2012 R2",
    "Windows 10 Education",
)
OS_BUILDS = ("7601", "9600", "14393", "16299", "17134", "17763", "18362", "18363")

SYSTEM_MODULES = (
    "ntdll.dll", "kernel32.dll", "kernelbase.dll", "user32.dll", "gdi32.dll", "advapi32.dll", "msvcrt.dll",
    "ole32.dll", "oleaut32.dll", "shell32.dll", "shlwapi.dll", "combase.dll", "rpcrt4.dll", "sechost.dll",
    "ws2_32.dll", "crypt32.dll", "wininet.dll", "winhttp.dll", "uxtheme.dll", "dwmapi.dll", "version.dll",
    "imm32.dll", "comctl32.dll", "bcrypt.dll", "ucrtbase.dll", "msvcp140.dll", "vcruntime140.dll",
    "d3d11.dll", "dxgi.dll", "mswsock.dll",
)

API_NAMES = (
    "RtlUserThreadStart", "BaseThreadInitThunk", "NtWaitForSingleObject", "WaitForMultipleObjectsEx",
    "GetMessageW", "DispatchMessageW", "CreateFileW", "ReadFile", "WriteFile", "LoadLibraryA",
    "GetProcAddress", "VirtualAlloc", "HeapAlloc", "CoInitializeEx", "RegOpenKeyExW", "InternetOpenUrlW",
)

SYLLABLES = ("zor", "kav", "mex", "tri", "vul", "nax", "qel", "dro", "pym", "sul", "fen", "gro", "hax", "jin")

BENIGN_RESOURCES = (
    "report.docx", "invoice.pdf", "settings.ini", "cache.db", "thumbs.db", "profile.json", "notes.txt",
    "budget.xlsx", "slides.pptx", "history.sqlite", "config.xml", "license.txt", "meeting.ics",
    "photo.jpg", "archive.zip", "update.log",
)
BENIGN_HOSTS = (
    "update.microsoft.com", "cdn.office.net", "login.live.com", "www.google.com", "zoom.us",
    "slack-edge.com", "webex.com", "download.mozilla.org",
)
BENIGN_TASKS = (
    "\\Microsoft\\Windows\\Defrag\\ScheduledDefrag", "\\Microsoft\\Office\\OfficeTelemetryAgentLogOn",
    "\\GoogleUpdateTaskMachineCore", "\\Microsoft\\Windows\\WindowsUpdate\\Scheduled Start",
    "\\OneDrive Standalone Update Task", "\\Adobe Acrobat Update Task",
)
BENIGN_RUN_ENTRIES = (
    "OneDrive=onedrive.exe /background", "SecurityHealth=securityhealthsystray.exe",
    "Teams=update.exe --processStart teams.exe", "iTunesHelper=ituneshelper.exe",
    "RtkAudUService=rtkaudioservice64.exe", "Zoom=zoom.exe --autostart",
)
BENIGN_FLAGS = (
    "--type=renderer", "/safe", "-nosplash", "--no-first-run", "/n", "-embedding", "--profile-directory=default",
    "/automation", "--autostart", "/dde", "-silent", "--lang=en-us",
)
MAGIC_TYPES = ("PE32 executable", "PDF document", "Zip archive", "MS Office document", "PNG image")
SECTION_NAMES = (".text", ".rdata", ".data", ".rsrc", ".reloc", ".pdata", ".tls")
TIMEZONES = ("UTC", "UTC+01:00", "UTC+02:00", "UTC-05:00", "UTC-08:00", "UTC+05:30", "UTC+08:00")
REGISTERS = ("rax", "rbx", "rcx", "rdx", "rsp", "rbp", "rip")

BENIGN_POOL_SIZE = 16
FAMILY_POOL_SIZE = 6
MAX_DRAWS_PER_NAME = 1000

SLOT_COUNTS = {
    "stack_frame": 8,
    "snapshot_word": 6,
    "snippet_word": 4,
    "access_word": 2,
    "module": 10,
    "resource": 4,
    "url": 2,
    "task": 1,
    "run_entry": 2,
    "flag": 2,
}


@dataclass
class IndicatorPools:
    benign: Dict[str, List[str]]
    families: Dict[str, Dict[str, List[str]]]
    os_versions: List[str]
    exe_names: List[str]
    seen: set = field(default_factory=set, repr=False)


def _take(names: Sequence[str], count: int, template: str) -> List[str]:
    """The first ``count`` names, padded with numbered ``template`` names."""
    taken = list(names[:count])
    taken += [template.format(index) for index in range(count - len(taken))]
    return taken


def _hex_word(rng: random.Random) -> str:
    return f"{rng.getrandbits(32):08x}"


def _word(rng: random.Random) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(2))


def _unique(rng: random.Random, seen: set, make, count: int) -> List[str]:
    values = []
    attempts = 0
    while len(values) < count:
        if attempts >= count * MAX_DRAWS_PER_NAME:
            raise InvalidSpec(f"cannot draw {count} distinct names; reduce the pool sizes")
        attempts += 1
        value = make(rng)
        if value.lower() not in seen:
            seen.add(value.lower())
            values.append(value)
    return values


def _benign_pools(rng: random.Random, modules: List[str], seen: set) -> Dict[str, List[str]]:
    def frame(r):
        return f"{r.choice(modules)}!{r.choice(API_NAMES)}+0x{r.randrange(16, 4096):x}"

    def url(r):
        return f"https://{r.choice(BENIGN_HOSTS)}/{_word(r)}"

    pools = {
        "stack_frame": _unique(rng, seen, frame, BENIGN_POOL_SIZE),
        "snapshot_word": _unique(rng, seen, _hex_word, BENIGN_POOL_SIZE),
        "snippet_word": _unique(rng, seen, _hex_word, BENIGN_POOL_SIZE),
        "access_word": _unique(rng, seen, _hex_word, BENIGN_POOL_SIZE),
        "module": list(modules),
        "resource": list(BENIGN_RESOURCES),
        "url": _unique(rng, seen, url, BENIGN_POOL_SIZE),
        "task": list(BENIGN_TASKS),
        "run_entry": list(BENIGN_RUN_ENTRIES),
        "flag": list(BENIGN_FLAGS),
    }
    for name in ("module", "resource", "task", "run_entry", "flag"):
        seen.update(value.lower() for value in pools[name])
    return pools


def _family_pools(rng: random.Random, seen: set) -> Dict[str, List[str]]:
    def frame(r):
        return f"{_word(r)}.dll!{r.choice(API_NAMES)}+0x{r.randrange(16, 4096):x}"

    makers = {
        "stack_frame": frame,
        "snapshot_word": _hex_word,
        "snippet_word": _hex_word,
        "access_word": _hex_word,
        "module": lambda r: f"{_word(r)}{r.randrange(10)}.dll",
        "resource": lambda r: f"{_word(r)}{r.randrange(100)}.{r.choice(('tmp', 'dat', 'bin', 'ps1', 'vbs'))}",
        "url": lambda r: f"http://{_word(r)}.{r.choice(('ru', 'top', 'xyz', 'cc'))}/{_word(r)}",
        "task": lambda r: f"\\{_word(r).title()}Updater{r.randrange(100)}",
        "run_entry": lambda r: f"{_word(r).title()}Svc=%appdata%\\{_word(r)}.exe",
        "flag": lambda r: f"--{_word(r)}{r.randrange(100)}",
    }
    return {kind: _unique(rng, seen, make, FAMILY_POOL_SIZE) for kind, make in makers.items()}


def build_pools(spec: GenSpec) -> IndicatorPools:
    rng = random.Random(f"{spec.seed}:pools")
    het = spec.heterogeneity
    seen: set = set()
    modules = _take(SYSTEM_MODULES, het.n_module_pool, "appmod{:03d}.dll")
    benign = _benign_pools(rng, modules, seen)
    family_names = _take(MALWARE_FAMILIES, het.n_malware_families, "Family {:02d}")
    families = {name: _family_pools(rng, seen) for name in family_names}
    os_versions = [
        f"{OS_NAMES[i % len(OS_NAMES)]} build {OS_BUILDS[i % len(OS_BUILDS)]}"
        for i in range(het.n_os_versions)
    ]
    exe_names = _take(HOST_EXECUTABLES, het.n_exe_names, "app{:03d}.exe")
    return IndicatorPools(benign=benign, families=families, os_versions=os_versions, exe_names=exe_names, seen=seen)


def _fill_slots(rng: random.Random, pools: IndicatorPools, family, overlap: float) -> Dict[str, List[str]]:
    slots = {}
    for kind, count in SLOT_COUNTS.items():
        values = []
        for _ in range(count):
            draw = rng.random()
            source = pools.families[family] if family is not None and draw >= overlap else pools.benign
            values.append(rng.choice(source[kind]))
        slots[kind] = values
    return slots


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _address(rng: random.Random, low: int = 0x00400000, high: int = 0x7FFF0000) -> str:
    return hex(rng.randrange(low, high))


def _resource(rng: random.Random, name: str, before_ms: int) -> ResourceEntry:
    created = rng.randrange(YEAR_START_MS - 86_400_000 * 365, before_ms)
    return ResourceEntry(
        path=f"C:\\Users\\Public\\Documents\\{name}",
        size=rng.randrange(128, 4_000_000),
        hash=_sha256(name),
        created=created,
        modified=rng.randrange(created, before_ms + 1),
    )


def _module(rng: random.Random, name: str) -> ModuleEntry:
    base = rng.randrange(0x0001, 0x7FFF) << 16
    size = rng.randrange(1, 512) << 12
    return ModuleEntry(
        base=hex(base),
        end=hex(base + size),
        size=size,
        link_meta=f"linker {rng.choice(('14.0', '14.16', '14.20', '12.0'))}",
        path=f"C:\\Windows\\System32\\{name}",
    )


def _pe_block(rng: random.Random, exe_name: str, arch: str, before_ms: int) -> PeBlock:
    sections = [
        SectionEntry(
            name=name,
            virtual_size=rng.randrange(0x200, 0x200000),
            raw_size=rng.randrange(0x200, 0x200000) & ~0x1FF,
            characteristics=rng.choice((0x60000020, 0x40000040, 0xC0000040)),
        )
        for name in SECTION_NAMES[:rng.randrange(3, len(SECTION_NAMES) + 1)]
    ]
    imports = rng.sample(API_NAMES, rng.randrange(4, 10))
    stem = exe_name.rsplit(".", 1)[0]
    created = rng.randrange(YEAR_START_MS - 86_400_000 * 365, before_ms)
    return PeBlock(
        pe_type=PeType.PE32 if arch == "X86" else PeType.PE32_PLUS,
        section_count=len(sections),
        sections=sections,
        import_count=len(imports),
        export_count=0,
        import_names=imports,
        export_names=[],
        export_module_name=exe_name,
        characteristics=rng.choice((0x0102, 0x0122, 0x0022)),
        compile_timestamp=rng.randrange(1483228800, YEAR_START_MS // 1000),
        signed=rng.random() < 0.8,
        arch=arch,
        entry_point_rva=rng.randrange(0x1000, 0x80000),
        entropy_bits=round(rng.uniform(4.5, 7.9), 3),
        file_size=rng.randrange(50_000, 80_000_000),
        pdb_path=f"C:\\build\\{stem}\\release\\{stem}.pdb",
        created=created,
        modified=rng.randrange(created, before_ms + 1),
    )


def generate_log(index: int, label: Label, spec: GenSpec, pools: IndicatorPools) -> CanonicalLog:
    rng = random.Random(f"{spec.seed}:{index}")
    family = rng.choice(sorted(pools.families)) if label == Label.MALICIOUS else None
    slots = _fill_slots(rng, pools, family, spec.overlap)

    timestamp = rng.randrange(YEAR_START_MS, YEAR_END_MS)
    exe_name = rng.choice(pools.exe_names)
    stem = exe_name.rsplit(".", 1)[0]
    arch = rng.choice(("X86", "X64"))
    file_created = rng.randrange(YEAR_START_MS - 86_400_000 * 365, timestamp)
    parent_exe = rng.choice(("explorer.exe", "svchost.exe", "services.exe", "cmd.exe", "winlogon.exe"))

    anonymized = AnonymizedBlock(
        username=f"user{rng.randrange(5000):04d}",
        domain_name=f"corp{rng.randrange(200):03d}",
        machine_name=f"host-{rng.randrange(100000):05d}",
        ip_address=f"10.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}",
        serial_number=f"{rng.getrandbits(48):012X}",
    )
    metadata = MetadataBlock(
        timestamp=timestamp,
        os_name=rng.choice(pools.os_versions),
        os_build=rng.choice(OS_BUILDS),
        exe_path=f"C:\\Program Files\\{stem}\\{exe_name}",
        exe_name=exe_name,
        exe_hash=_sha256(exe_name),
        file_created=file_created,
        file_modified=rng.randrange(file_created, timestamp + 1),
        referral_url=f"https://{rng.choice(BENIGN_HOSTS)}/download",
        user_login_time=rng.randrange(timestamp - 86_400_000, timestamp + 1),
        thread_count=rng.randrange(1, 64),
        integrity_level=rng.choice(list(IntegrityLevel)),
        exe_arch=arch,
        work_cycles=rng.randrange(10_000, 10_000_000_000),
        kernel_time_ms=rng.randrange(0, 600_000),
        process_id=rng.randrange(4, 65536, 4),
        thread_id=rng.randrange(4, 65536, 4),
        privilege_level=rng.choice(list(PrivilegeLevel)),
        timezone=rng.choice(TIMEZONES),
    )

    snippets = slots["snippet_word"]
    resources = slots["resource"]
    run_entries = slots["run_entry"]
    runtime = RuntimeBlock(
        base_address=hex(rng.randrange(0x40, 0x7FF0) << 16),
        command_line=" ".join([exe_name] + slots["flag"]),
        registers={name: _address(rng) for name in REGISTERS},
        register_snippets={"rip": "".join(snippets[:2]), "rsp": "".join(snippets[2:])},
        eflags=hex(rng.choice((0x202, 0x246, 0x286, 0x297))),
        signature=rng.choice(("Microsoft Corporation", "Google LLC", "Zoom Video Communications", "unsigned")),
        loaded_resources=[_resource(rng, name, timestamp) for name in resources[:2]],
        vmem_free=rng.randrange(1 << 30, 1 << 40),
        vmem_used=rng.randrange(1 << 20, 1 << 34),
        hklm_run_entries=run_entries,
        dep_enabled=rng.random() < 0.9,
        illegal_accesses=[IllegalAccess(address=_address(rng), bytes="".join(slots["access_word"]))],
        import_table_hash=_sha256(f"imports:{exe_name}")[:32],
        injector=InjectorInfo(
            pid=rng.randrange(4, 65536, 4),
            ppid=rng.randrange(4, 65536, 4),
            hash=_sha256(parent_exe),
            path=f"C:\\Windows\\{parent_exe}",
        ),
        auto_elevate=rng.random() < 0.1,
        loaded_modules=[_module(rng, name) for name in slots["module"]],
        opened_resources=[_resource(rng, name, timestamp) for name in resources[2:]],
        parent_process=ProcessDescriptor(
            process_id=rng.randrange(4, 65536, 4),
            path=f"C:\\Windows\\{parent_exe}",
            hash=_sha256(parent_exe),
            command_line=parent_exe,
            integrity_level=rng.choice(list(IntegrityLevel)),
            file_created=YEAR_START_MS - 86_400_000 * 400,
            file_modified=YEAR_START_MS - 86_400_000 * 30,
        ),
        process_blocks=[f"heap:{_address(rng)}" for _ in range(rng.randrange(1, 4))],
        stack_snapshot="".join(slots["snapshot_word"]),
        stack_trace=slots["stack_frame"],
        embedded_files=[
            EmbeddedFile(magic_type=rng.choice(MAGIC_TYPES), offset=rng.randrange(0, 1 << 20))
            for _ in range(rng.randrange(1, 3))
        ],
        found_urls=slots["url"],
        found_ips=[f"192.168.{rng.randrange(4)}.{rng.randrange(1, 8)}" for _ in range(2)],
        scheduled_tasks=slots["task"],
        registry_attempts=[
            RegistryAttempt(
                key=f"HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run\\{entry.split('=', 1)[0]}",
                result=rng.choice(("SUCCESS", "ACCESS_DENIED", "NAME_NOT_FOUND")),
            )
            for entry in run_entries
        ],
    )
    return CanonicalLog(
        label=label,
        anonymized=anonymized,
        metadata=metadata,
        runtime=runtime,
        pe=_pe_block(rng, exe_name, arch, timestamp),
    )


def _coerce_spec(spec: Union[GenSpec, Mapping]) -> GenSpec:
    if isinstance(spec, GenSpec):
        return spec
    try:
        return GenSpec.model_validate(spec)
    except ValidationError as exc:
        raise InvalidSpec(f"invalid generation spec: {exc.errors()[0]['msg']}") from None


def generate_corpus(spec: Union[GenSpec, Mapping], check: bool = False) -> List[CanonicalLog]:
    """Labeled synthetic logs, identical for identical specs.

    With ``check`` every log is re-validated against the canonical schema.
    """
    spec = _coerce_spec(spec)
    pools = build_pools(spec)
    labels = [Label.MALICIOUS] * spec.n_malicious + [Label.BENIGN] * spec.n_benign
    random.Random(f"{spec.seed}:labels").shuffle(labels)
    logs = [generate_log(index, label, spec, pools) for index, label in enumerate(labels)]
    if check:
        for index, log in enumerate(logs):
            violations = validate_log(log)
            if violations:
                raise InvalidSpec(f"generated log {index} violates the schema at {violations[0]}")
    logger.info("generated %d logs (%d malicious, %d benign, overlap %.2f)",
                len(logs), spec.n_malicious, spec.n_benign, spec.overlap)
    return logs
