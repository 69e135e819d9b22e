"""Exception hierarchy shared across the package."""


class DsrError(Exception):
    """Base class for all errors raised by this package."""


# --- signal / feature layer ---------------------------------------------


class AudioTooShortError(DsrError):
    """Utterance shorter than one analysis window."""


class DimensionMismatchError(DsrError):
    """Vector/matrix dimensionality does not match the expected layout."""


class AlignmentError(DsrError):
    """Base class for phoneme-alignment file problems."""


class EmptyAlignmentError(AlignmentError):
    pass


class UnknownPhonemeError(AlignmentError):
    pass


class InvalidDurationError(AlignmentError):
    pass


class FrameCountMismatchError(AlignmentError):
    pass


# --- model layer ---------------------------------------------------------


class ShapeError(DsrError):
    """Tensor shapes inconsistent with an operation's contract."""


class EmptyInputError(DsrError):
    pass


class DecodeRunawayError(DsrError):
    """Greedy decoding exceeded the maximum output length."""


# --- corpus / persistence -------------------------------------------------


class ManifestError(DsrError):
    pass


class CheckpointError(DsrError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class MissingFileError(DsrError):
    pass


# --- training / adaptation -------------------------------------------------


class CorpusError(DsrError):
    """Corpus does not satisfy a training stage's preconditions."""


class FrozenParameterError(DsrError):
    """A parameter set documented as frozen changed during a stage."""


class ConfigError(DsrError):
    pass
