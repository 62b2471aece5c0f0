"""Exception types shared across the package."""


class PeoHoiError(Exception):
    """Base class for all package errors."""


class DimensionError(PeoHoiError, ValueError):
    """Operand shapes do not agree."""


class ConfigError(PeoHoiError, ValueError):
    pass


class UsageError(PeoHoiError, RuntimeError):
    pass


class SchemaError(PeoHoiError, ValueError):
    """A file or record violates its schema."""


class NonFiniteError(PeoHoiError, FloatingPointError):
    """A primitive produced NaN or infinity."""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"non-finite values produced by primitive '{op}'")


class CheckpointError(PeoHoiError, ValueError):
    pass


class TrainingDiverged(PeoHoiError, RuntimeError):
    """Raised when the training loss becomes non-finite.

    Carries the last checkpoint whose loss was finite so callers can keep it.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step
