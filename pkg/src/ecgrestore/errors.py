"""Shared exception types.

The CLI maps these onto exit codes: configuration/input problems exit 2,
numerical failures exit 3.
"""


class ConfigurationError(ValueError):
    """A shape, hyperparameter, or file layout is inconsistent with the contract."""


class InputError(ValueError):
    """Caller-supplied data violates a precondition (range, duration, format)."""


class NumericsError(ArithmeticError):
    """A computation produced non-finite values."""


class TrainingDivergenceError(NumericsError):
    """Training loss became non-finite; the run should abort with diagnostics."""
