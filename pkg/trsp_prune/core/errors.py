"""
Exception hierarchy for the TRSP pruning toolkit.

Every error raised on purpose derives from :class:`TrspError`; the command line maps each
family to its own exit code.
"""


class TrspError(Exception):
    """Base class of all toolkit errors."""

    exit_code = 5


class ConfigError(TrspError, ValueError):
    """Raised when a configuration value is missing, unknown or out of range."""

    exit_code = 2


class DataError(TrspError):
    """Raised for unusable input data (corpus, token ids, checkpoint files)."""

    exit_code = 3


class NumericalError(TrspError, ArithmeticError):
    """Raised when an operation produces NaN or Inf."""

    exit_code = 4

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        message = f"Non-finite value produced by '{op}'"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ShapeError(TrspError, ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(TrspError, RuntimeError):
    """Raised on misuse of the differentiation tape."""


class InvariantViolation(TrspError, AssertionError):
    """Raised when an internal invariant does not hold."""
