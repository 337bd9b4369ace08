"""Package-wide error types beyond the tensor-level ones."""

from .tensor import DimensionError, UsageError

__all__ = ["ConfigError", "DimensionError", "InvariantViolation", "UsageError"]


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class InvariantViolation(RuntimeError):
    """A structural guarantee (frozen weights, phase isolation) was broken."""
