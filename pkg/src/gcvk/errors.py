"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, ShapeError /
ConfigError -> 2, NumericError / FormatError -> 3.
"""


class GcvkError(Exception):
    """Base class for all package errors."""


class ShapeError(GcvkError, ValueError):
    """Tensor extents incompatible with an operation."""


class DtypeError(GcvkError, TypeError):
    """Mixed f32/f64 operands in one expression graph."""


class ConfigError(GcvkError, ValueError):
    """Invalid model or run configuration."""


class NumericError(GcvkError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class FormatError(GcvkError, ValueError):
    """Malformed weights file."""


class UsageError(GcvkError, ValueError):
    """API or CLI misuse (bad arguments, non-scalar objective, ...)."""
