"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: IO errors (plain OSError) -> 2,
ValidationError -> 3, NumericalError -> 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit-raised errors."""


class ValidationError(ToolkitError):
    """Malformed input or violated structural invariant."""


class NumericalError(ToolkitError):
    """A solver produced non-finite values or otherwise failed numerically."""
