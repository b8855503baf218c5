"""
Exception classes raised by ``gfnsmc``.

Each class derives from the builtin exception that would otherwise be raised, so
callers catching ``ValueError`` or ``RuntimeError`` keep working.
"""


class GfnSmcError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GfnSmcError, ValueError):
    """A state or batch has the wrong shape or dimension."""


class ConfigError(GfnSmcError, ValueError):
    """A configuration field is unknown or violates an invariant."""


class ContractError(GfnSmcError, ValueError):
    """A function was called outside of its precondition."""


class CheckpointError(GfnSmcError, ValueError):
    """A checkpoint file could not be parsed or has the wrong format version."""


class CapabilityError(GfnSmcError, NotImplementedError):
    """The requested operation is not supported by the target or process."""


class TrainingError(GfnSmcError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class DegenerateWeightsError(GfnSmcError, RuntimeError):
    """All importance weights are zero (every log-weight is -inf)."""
