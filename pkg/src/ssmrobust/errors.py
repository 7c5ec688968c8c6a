"""Exception types shared across the library.

Every contract violation raises one of these instead of a bare ValueError so
the CLI can map failures onto distinct exit codes.
"""


class SsmRobustError(Exception):
    """Base class for all library errors."""


class DimensionError(SsmRobustError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(SsmRobustError, RuntimeError):
    """Gradient tape used outside its contract (non-scalar loss, reuse, ...)."""


class MissingRootError(TapeError):
    """A gradient was requested for a tensor that was never watched."""


class TaxonomyError(SsmRobustError, KeyError):
    """A parameter key or activation site does not belong to any known group."""


class GridError(SsmRobustError, ValueError):
    """Image geometry is incompatible with the requested patch grid."""


class FormatError(SsmRobustError, ValueError):
    """A byte stream violates its declared file format."""

    def __init__(self, message, *, offset=None, member=None):
        detail = message
        if member is not None:
            detail += f" (member {member!r})"
        if offset is not None:
            detail += f" (byte offset {offset})"
        super().__init__(detail)
        self.offset = offset
        self.member = member


class VersionError(FormatError):
    """A container declares a format version this build does not support."""


class SchemaError(SsmRobustError, ValueError):
    """A dataset archive is well-formed but does not match the expected layout."""


class FilterError(SsmRobustError, ValueError):
    """A key filter matched no parameters."""


class BudgetError(SsmRobustError, ValueError):
    """A fault budget exceeds the addressable (element, bit) pairs."""


class PlanError(SsmRobustError, ValueError):
    """A fault plan references targets that do not exist in the tree."""


class ConfigError(SsmRobustError, ValueError):
    """An experiment configuration key or value is invalid."""


class TrainingDivergedError(SsmRobustError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch, step):
        super().__init__(f"training loss became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
