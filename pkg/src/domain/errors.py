class MemlogError(Exception):
    """Base class for every error raised by the detection pipeline.

    ``code`` is the stable protocol code reported by the detector service and
    ``exit_code`` the process exit status used by the command-line interface.
    """

    code = "INTERNAL"
    exit_code = 1

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# Log parsing

class LogParseError(MemlogError):
    code = "LOG_PARSE"
    exit_code = 4


class NotJson(LogParseError):
    pass


class OversizeLog(LogParseError):
    pass


class EmptyDocument(LogParseError):
    pass


# PE parsing

class PeParseError(MemlogError):
    code = "PE_PARSE"
    exit_code = 11


class BadDosMagic(PeParseError):
    pass


class BadPeSignature(PeParseError):
    pass


class TruncatedHeader(PeParseError):
    pass


class MalformedSectionTable(PeParseError):
    pass


class BadDataDirectory(PeParseError):
    pass


class EmptyInput(MemlogError):
    code = "EMPTY_INPUT"


# Model files

class ModelLoadFailure(MemlogError):
    code = "MODEL_LOAD"
    exit_code = 5


class BadMagic(ModelLoadFailure):
    pass


class VersionMismatch(ModelLoadFailure):
    pass


class CorruptPayload(ModelLoadFailure):
    pass


# Embeddings

class EmptyCorpus(MemlogError):
    code = "EMPTY_CORPUS"
    exit_code = 10


class VocabMismatch(MemlogError):
    code = "VOCAB_MISMATCH"
    exit_code = 12


class UnknownToken(MemlogError):
    code = "UNKNOWN_TOKEN"
    exit_code = 13


class ZeroVector(MemlogError):
    code = "ZERO_VECTOR"


# Training and evaluation

class SingleClassInput(MemlogError):
    code = "SINGLE_CLASS"
    exit_code = 3


class TooFewRows(MemlogError):
    code = "TOO_FEW_ROWS"
    exit_code = 14


class NonFiniteFeature(MemlogError):
    code = "NON_FINITE_FEATURE"
    exit_code = 15


class UnlabeledLog(MemlogError):
    code = "UNLABELED_LOG"
    exit_code = 16


class InsufficientClassCount(MemlogError):
    code = "INSUFFICIENT_CLASS_COUNT"
    exit_code = 6


class LengthMismatch(MemlogError):
    code = "LENGTH_MISMATCH"
    exit_code = 17


class DegenerateDenominator(MemlogError):
    code = "DEGENERATE_DENOMINATOR"


class InvalidSpec(MemlogError):
    code = "INVALID_SPEC"
    exit_code = 7


# Runtime surfaces

class BindFailure(MemlogError):
    code = "BIND_FAILURE"
    exit_code = 8


class WatchDirMissing(MemlogError):
    code = "WATCH_DIR_MISSING"
    exit_code = 9


class DispatchFailure(MemlogError):
    code = "DISPATCH_FAILURE"
