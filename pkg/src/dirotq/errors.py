"""Exception types shared across the package.

The CLI maps these onto exit codes: config/shape problems exit 1,
numerical failures exit 2.
"""


class DirotqError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(DirotqError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(DirotqError, ValueError):
    """A configuration value or combination is invalid."""


class NumericalError(DirotqError, RuntimeError):
    """A numerical routine failed (non-convergence, indefinite factorization)."""
