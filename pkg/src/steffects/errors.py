"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad flag values, malformed config files."""


class DataError(ValueError):
    """Invalid input data: schema violations, missing arms, NaNs."""


class NumericalError(RuntimeError):
    """Numerical failure: solver non-convergence, underflow, ill-conditioning."""
