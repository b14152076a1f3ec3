"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent user-supplied data (CSV files, masks, configs)."""


class NumericalError(RuntimeError):
    """A numerical operation failed (singular matrix, diverging iteration, ...)."""
