"""
Exception types shared across the training framework.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3.
"""


class DynaError(Exception):
    """Base class for all framework errors."""


class ConfigError(DynaError, ValueError):
    """Invalid configuration value, override or command-line input."""


class NumericalError(DynaError, ArithmeticError):
    """Non-finite inputs, gradients, losses or metrics."""


class RolloutError(DynaError, ValueError):
    """Malformed rollout data: shape mismatch, broken chain, terminal stepping."""
