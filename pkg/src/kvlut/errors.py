"""Exception hierarchy shared by all kvlut modules.

Each error class carries a distinct CLI exit code so batch scripts can
dispatch on failure cause without parsing stderr.
"""


class KvlutError(Exception):
    """Base class for all kvlut errors."""

    exit_code = 1


class IoError(KvlutError):
    """A required file is missing or unreadable."""

    exit_code = 3


class FormatError(KvlutError):
    """A binary artifact has the wrong length, magic, or version."""

    exit_code = 4


class CorruptRomError(FormatError):
    """Codebook ROM content violates its ordering invariants."""

    exit_code = 5


class CorruptCacheError(FormatError):
    """A quantized cache record holds an out-of-range index."""

    exit_code = 6


class InvalidDimensionError(KvlutError):
    """Vector length is not a power of two or does not match its peers."""

    exit_code = 7


class InvalidInputError(KvlutError):
    """Input data contains NaN/Inf or is otherwise unusable."""

    exit_code = 8


class NonConvergenceError(KvlutError):
    """The codebook solver failed to reach the requested residual."""

    exit_code = 9

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigConflictError(KvlutError):
    """Loaded artifacts disagree on (d, b) or other shared parameters."""

    exit_code = 10


class EmptyCalibrationError(KvlutError):
    """A calibration set contains no usable (nonzero) rows."""

    exit_code = 11
