"""Exception hierarchy shared by all modules.

Each class maps to one CLI exit code (see ``cli.EXIT_CODES``).
"""

from __future__ import annotations


class TunnelError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameter(TunnelError, ValueError):
    pass


class InvalidInput(TunnelError, ValueError):
    pass


class ConstructionFailed(TunnelError, RuntimeError):
    pass


class ConditioningFailed(ConstructionFailed):
    """Rejection sampling of a conditioned expander ran out of attempts."""

    def __init__(self, message: str, attempts: int, last_lambda2: float | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_lambda2 = last_lambda2


class InstanceTooLarge(ConstructionFailed):
    def __init__(self, message: str, forecast: int, cap: int):
        super().__init__(message)
        self.forecast = forecast
        self.cap = cap


class ConstructionViolation(ConstructionFailed):
    """An instance failed a structural audit (e.g. edges skipping clusters)."""


class NumericFailure(TunnelError, ArithmeticError):
    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class PredictionMismatch(NumericFailure):
    pass


class ParseError(TunnelError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
