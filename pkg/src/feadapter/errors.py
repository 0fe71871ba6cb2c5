"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is structurally invalid."""


class UsageError(RuntimeError):
    """An operation was called in a way its contract forbids."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf values."""


class CheckpointError(RuntimeError):
    """A checkpoint file could not be written or read back."""


class TrainingDiverged(RuntimeError):
    """Training aborted because the loss became non-finite."""
