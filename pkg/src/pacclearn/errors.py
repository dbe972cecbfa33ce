"""Exception hierarchy shared by every module."""


class PaccError(Exception):
    """Base class for all errors raised by pacclearn."""


class ConfigError(PaccError, ValueError):
    """Invalid configuration value or violated precondition."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ShapeError(PaccError, ValueError):
    pass


class LabelError(PaccError, ValueError):
    pass


class DataError(PaccError, ValueError):
    pass


class SchemaError(DataError):
    pass


class NumericOverflowError(PaccError, FloatingPointError):
    """A non-finite value appeared in a computation."""

    def __init__(self, op, detail=""):
        msg = f"non-finite value produced by operation '{op}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op


class InfeasibilityError(PaccError):
    """Raised when a constraint cannot be satisfied.

    ``constraint_id`` names the offending constraint when one is known;
    ``details`` carries any per-item diagnostics.
    """

    def __init__(self, message, constraint_id=None, details=None):
        super().__init__(message)
        self.constraint_id = constraint_id
        self.details = details
