"""Exception types shared across the package."""


class MMMError(Exception):
    """Base class for all package errors."""


class UsageError(MMMError, ValueError):
    """A caller passed arguments that violate an operation's contract."""


class ShapeError(UsageError):
    """Operand shapes are incompatible."""


class NumericError(MMMError, ArithmeticError):
    """NaN or otherwise unusable numbers reached an operation."""


class DegenerateInputError(UsageError):
    """Input is well-formed but leaves nothing to compute on (e.g. empty memory)."""


class LoadError(MMMError):
    """A dataset or checkpoint file could not be read."""


class CheckpointError(LoadError):
    """Checkpoint file is corrupt, truncated, or of an unknown version."""
