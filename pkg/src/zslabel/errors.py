"""Exception types shared across the package.

Grouped by CLI exit code: configuration (2), data (3), numeric (4).
"""


class ZslabelError(Exception):
    """Base class for all package errors."""


class ConfigError(ZslabelError):
    """Invalid or infeasible configuration."""


class DataError(ZslabelError):
    """Base class for dataset and input problems."""


class ParseError(DataError):
    """Malformed input file; message carries the file location."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ValidationError(DataError):
    """Inputs violate a documented precondition."""


class AlignmentError(DataError):
    """Word/token or scores/gold alignment mismatch."""


class PairingError(DataError):
    """Seed sets of two methods cannot be paired for a t-test."""


class UndefinedMetricError(DataError):
    """Metric has no defined value on this input (e.g. MAP without positives)."""


class SequenceLengthError(DataError):
    """Token sequence exceeds the encoder maximum; caller must truncate."""


class CheckpointVersionError(DataError):
    """Checkpoint format version is not supported."""


class NumericError(ZslabelError):
    """Non-finite values or numerically invalid operation."""


class DimensionError(NumericError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(ZslabelError):
    """An internal API contract was violated by the caller."""


class ConditioningError(NumericError):
    """Linear system remained singular after ridge escalation."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
