"""Exception hierarchy shared by every dnfer module."""


class DnferError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(DnferError, ValueError):
    """Invalid dimensions, hyperparameters or option names."""


class InputError(DnferError, ValueError):
    """Data that violates an operation's preconditions."""


class ParseError(DnferError, ValueError):
    """Malformed CSV / IDX / checkpoint / config file."""


class NumericError(DnferError, ArithmeticError):
    """A non-finite value appeared during a forward or backward pass."""

    def __init__(self, message, layer=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.step = step


class InvariantError(DnferError, RuntimeError):
    """An internal consistency check failed."""
