"""Exception types shared across the package."""

from __future__ import annotations


class IpsacError(Exception):
    """Base class for all package errors."""


class DomainError(IpsacError, ValueError):
    """An argument lies outside its mathematical domain."""


class ShapeError(IpsacError, ValueError):
    """Array dimensions are inconsistent."""


class ValidationError(IpsacError, ValueError):
    """Input data violates a structural requirement (e.g. not PSD)."""


class ConditioningError(IpsacError, ArithmeticError):
    """A matrix that must be inverted is singular or numerically so."""


class RecoveryError(IpsacError):
    """Precoder recovery from covariance matrices failed."""


class DegenerateUserError(RecoveryError):
    """A user receives zero useful power, so its precoder is undefined."""


class DegenerateTransformError(IpsacError):
    """The Charnes-Cooper scale variable collapsed to zero."""


class ConfigError(IpsacError, ValueError):
    """Experiment configuration is malformed.

    ``line`` is the 1-based source line when known; ``key`` names the
    offending setting.
    """

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.key = key


class StageError(IpsacError):
    """An error raised inside one stage of the alternating optimizer.

    The original exception is chained; ``stage`` names the failing step.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
