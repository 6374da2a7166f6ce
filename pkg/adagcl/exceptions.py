"""
Error types raised across the adagcl package.

The CLI maps each family to a process exit code.
"""


class AdaGCLError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(AdaGCLError):
    """Invalid arguments, configuration or call sequence."""

    exit_code = 1


class DataError(AdaGCLError):
    """Unreadable, malformed or degenerate input data."""

    exit_code = 2


class NumericalError(AdaGCLError):
    """Non-finite values or failed numerical checks."""

    exit_code = 3


class ShapeError(UsageError, ValueError):
    """Operands with incompatible shapes."""


class DomainError(NumericalError, ValueError):
    """An operation evaluated outside its mathematical domain."""
