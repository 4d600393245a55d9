from enum import Enum
from typing import Annotated, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

ADDRESS_PATTERN = r"^0x[0-9a-f]+$"
HEX_BYTES_PATTERN = r"^(?:[0-9a-f]{2})*$"

NonNegInt = Annotated[int, Field(ge=0)]
EpochMs = Annotated[int, Field(ge=0)]
HexAddress = Annotated[str, Field(pattern=ADDRESS_PATTERN)]
HexBytes = Annotated[str, Field(pattern=HEX_BYTES_PATTERN)]
SectionName = Annotated[str, Field(max_length=8)]
EntropyBits = Annotated[float, Field(ge=0.0, le=8.0)]


class Label(str, Enum):
    MALICIOUS = "Malicious"
    BENIGN = "Benign"


class Verdict(str, Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"


class IntegrityLevel(str, Enum):
    UNTRUSTED = "Untrusted"
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    SYSTEM = "System"


class Arch(str, Enum):
    X86 = "X86"
    X64 = "X64"


class PrivilegeLevel(str, Enum):
    GUEST = "Guest"
    STANDARD = "Standard"
    ADMINISTRATOR = "Administrator"


class PeType(str, Enum):
    PE32 = "PE32"
    PE32_PLUS = "PE32Plus"


class Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="ignore")


# Canonical runtime log

class AnonymizedBlock(Block):
    username: Optional[str] = None
    domain_name: Optional[str] = None
    machine_name: Optional[str] = None
    ip_address: Optional[str] = None
    serial_number: Optional[str] = None


class MetadataBlock(Block):
    timestamp: Optional[EpochMs] = None
    os_name: Optional[str] = None
    os_build: Optional[str] = None
    exe_path: Optional[str] = None
    exe_name: Optional[str] = None
    exe_hash: Optional[str] = None
    file_created: Optional[EpochMs] = None
    file_modified: Optional[EpochMs] = None
    referral_url: Optional[str] = None
    user_login_time: Optional[EpochMs] = None
    thread_count: Optional[NonNegInt] = None
    integrity_level: Optional[IntegrityLevel] = None
    exe_arch: Optional[Arch] = None
    work_cycles: Optional[NonNegInt] = None
    kernel_time_ms: Optional[NonNegInt] = None
    process_id: Optional[NonNegInt] = None
    thread_id: Optional[NonNegInt] = None
    privilege_level: Optional[PrivilegeLevel] = None
    timezone: Optional[str] = None


class ResourceEntry(Block):
    path: Optional[str] = None
    size: Optional[NonNegInt] = None
    hash: Optional[str] = None
    created: Optional[EpochMs] = None
    modified: Optional[EpochMs] = None


class ModuleEntry(Block):
    base: Optional[HexAddress] = None
    end: Optional[HexAddress] = None
    size: Optional[NonNegInt] = None
    link_meta: Optional[str] = None
    path: Optional[str] = None


class IllegalAccess(Block):
    address: Optional[HexAddress] = None
    bytes: Optional[HexBytes] = None


class InjectorInfo(Block):
    pid: Optional[NonNegInt] = None
    ppid: Optional[NonNegInt] = None
    hash: Optional[str] = None
    path: Optional[str] = None


class ProcessDescriptor(Block):
    process_id: Optional[NonNegInt] = None
    path: Optional[str] = None
    hash: Optional[str] = None
    command_line: Optional[str] = None
    integrity_level: Optional[IntegrityLevel] = None
    file_created: Optional[EpochMs] = None
    file_modified: Optional[EpochMs] = None


class EmbeddedFile(Block):
    magic_type: Optional[str] = None
    offset: Optional[NonNegInt] = None


class RegistryAttempt(Block):
    key: Optional[str] = None
    result: Optional[str] = None


class RuntimeBlock(Block):
    base_address: Optional[HexAddress] = None
    command_line: Optional[str] = None
    registers: Dict[str, HexAddress] = Field(default_factory=dict)
    register_snippets: Dict[str, HexBytes] = Field(default_factory=dict)
    eflags: Optional[HexAddress] = None
    signature: Optional[str] = None
    loaded_resources: List[ResourceEntry] = Field(default_factory=list)
    vmem_free: Optional[NonNegInt] = None
    vmem_used: Optional[NonNegInt] = None
    hklm_run_entries: List[str] = Field(default_factory=list)
    dep_enabled: Optional[bool] = None
    illegal_accesses: List[IllegalAccess] = Field(default_factory=list)
    import_table_hash: Optional[str] = None
    injector: Optional[InjectorInfo] = None
    auto_elevate: Optional[bool] = None
    loaded_modules: List[ModuleEntry] = Field(default_factory=list)
    opened_resources: List[ResourceEntry] = Field(default_factory=list)
    parent_process: Optional[ProcessDescriptor] = None
    process_blocks: List[str] = Field(default_factory=list)
    stack_snapshot: Optional[HexBytes] = None
    stack_trace: List[str] = Field(default_factory=list)
    embedded_files: List[EmbeddedFile] = Field(default_factory=list)
    found_urls: List[str] = Field(default_factory=list)
    found_ips: List[str] = Field(default_factory=list)
    scheduled_tasks: List[str] = Field(default_factory=list)
    registry_attempts: List[RegistryAttempt] = Field(default_factory=list)


class SectionEntry(Block):
    name: Optional[SectionName] = None
    virtual_size: Optional[NonNegInt] = None
    raw_size: Optional[NonNegInt] = None
    characteristics: Optional[NonNegInt] = None


class PeBlock(Block):
    pe_type: Optional[PeType] = None
    section_count: Optional[NonNegInt] = None
    sections: List[SectionEntry] = Field(default_factory=list)
    import_count: Optional[NonNegInt] = None
    export_count: Optional[NonNegInt] = None
    import_names: List[str] = Field(default_factory=list)
    export_names: List[str] = Field(default_factory=list)
    export_module_name: Optional[str] = None
    characteristics: Optional[NonNegInt] = None
    compile_timestamp: Optional[NonNegInt] = None
    signed: Optional[bool] = None
    arch: Optional[Arch] = None
    entry_point_rva: Optional[NonNegInt] = None
    entropy_bits: Optional[EntropyBits] = None
    file_size: Optional[NonNegInt] = None
    pdb_path: Optional[str] = None
    created: Optional[EpochMs] = None
    modified: Optional[EpochMs] = None

    @model_validator(mode="after")
    def check_consistency(self):
        if self.section_count is not None and self.section_count != len(self.sections):
            raise ValueError("section_count must equal the number of sections")
        if self.pe_type is not None and self.arch is not None:
            expected = Arch.X86 if self.pe_type == PeType.PE32 else Arch.X64
            if self.arch != expected:
                raise ValueError("PE32 images are X86 and PE32Plus images are X64")
        return self


class CanonicalLog(Block):
    label: Optional[Label] = None
    anonymized: AnonymizedBlock = Field(default_factory=AnonymizedBlock)
    metadata: MetadataBlock = Field(default_factory=MetadataBlock)
    runtime: RuntimeBlock = Field(default_factory=RuntimeBlock)
    pe: Optional[PeBlock] = None


class CleaningReport(BaseModel):
    dropped_fields: List[str] = Field(default_factory=list)
    normalized_fields: List[str] = Field(default_factory=list)
    parse_repairs: NonNegInt = 0

    @property
    def dropped_count(self) -> int:
        return len(self.dropped_fields)

    @property
    def normalized_count(self) -> int:
        return len(self.normalized_fields)

    @property
    def is_empty(self) -> bool:
        return not self.dropped_fields and not self.normalized_fields and self.parse_repairs == 0


# Detection

class DetectionResult(BaseModel):
    score: float = Field(ge=0.0, le=1.0)
    verdict: Verdict
    threshold: float = Field(gt=0.0, lt=1.0)
    model_version: str
    latency_ms: float = Field(ge=0.0)

    @model_validator(mode="after")
    def check_verdict(self):
        expected = Verdict.MALICIOUS if self.score >= self.threshold else Verdict.BENIGN
        if self.verdict != expected:
            raise ValueError("verdict does not match score and threshold")
        return self


class HealthOut(BaseModel):
    status: str
    model_version: Optional[str] = None


class ProtocolError(BaseModel):
    code: str
    message: str


# Evaluation

class ConfusionMatrix(BaseModel):
    tp: NonNegInt = 0
    fn: NonNegInt = 0
    fp: NonNegInt = 0
    tn: NonNegInt = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


UnitInterval = Annotated[float, Field(ge=0.0, le=1.0)]


class MetricsReport(BaseModel):
    auc: Optional[UnitInterval] = None
    acc: Optional[UnitInterval] = None
    ppv: Optional[UnitInterval] = None
    tpr: Optional[UnitInterval] = None
    fpr: Optional[UnitInterval] = None
    fnr: Optional[UnitInterval] = None
    f1: Optional[UnitInterval] = None
    undefined: List[str] = Field(default_factory=list)
    threshold: Optional[float] = None
    confusion: Optional[ConfusionMatrix] = None
    groups: Dict[str, ConfusionMatrix] = Field(default_factory=dict)


class SplitSpec(BaseModel):
    train_malicious_fraction: float = Field(default=0.70, gt=0.0, lt=1.0)
    test_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    test_size: Optional[int] = Field(default=None, ge=2)
    shuffle_seed: int = 0


# Training parameters

class EmbeddingParams(BaseModel):
    window: int = Field(default=5, ge=1)
    negatives: int = Field(default=5, ge=1)
    epochs: int = Field(default=5, ge=1)
    initial_lr: float = Field(default=0.025, gt=0.0)
    min_count: int = Field(default=2, ge=1)
    seed: int = 0


class GbdtParams(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    trees: int = Field(default=100, ge=0)
    max_depth: int = Field(default=6, ge=1, le=32)
    shrinkage: float = Field(default=0.1, gt=0.0)
    lambda_: float = Field(default=1.0, ge=0.0, alias="lambda")
    min_leaf: int = Field(default=5, ge=1)


# Synthetic corpora

class Heterogeneity(BaseModel):
    n_os_versions: int = Field(default=10, ge=1)
    n_exe_names: int = Field(default=33, ge=1)
    n_module_pool: int = Field(default=60, ge=1)
    n_malware_families: int = Field(default=20, ge=1)


class GenSpec(BaseModel):
    n_malicious: int = Field(default=500, ge=0)
    n_benign: int = Field(default=500, ge=0)
    overlap: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0
    heterogeneity: Heterogeneity = Field(default_factory=Heterogeneity)
