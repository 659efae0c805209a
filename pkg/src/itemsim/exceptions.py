"""Exception hierarchy.

The CLI maps ``ValidationError`` (and subclasses) to exit code 2 and
``NumericalError`` (and subclasses) to exit code 3.
"""

from __future__ import annotations


class ItemsimError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ItemsimError, ValueError):
    """Inputs violate a contract: domain, shape, schema, or precondition."""


class InsufficientDataError(ValidationError):
    """Too few observations to attempt a fit."""


class NumericalError(ItemsimError, ArithmeticError):
    """A numerical procedure failed (divergence, non-identifiability, NaN)."""


class NonIdentifiableError(NumericalError):
    """The data cannot pin down the requested parameters."""


class OptimizationError(NumericalError):
    """Optimizer hit a non-finite value; carries the last good iterate."""

    def __init__(self, message: str, last_x=None):
        super().__init__(message)
        self.last_x = last_x


class TrainingError(NumericalError):
    """Surrogate training diverged; carries the loss history so far."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class PipelineStageError(ItemsimError):
    """Wraps a failure inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.__cause__ = cause


class CalibrationWarning(UserWarning):
    """Non-fatal calibration issue (e.g. flat curve makes difficulty arbitrary)."""
