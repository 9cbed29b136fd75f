"""Error taxonomy shared across the toolkit.

ConfigError lives in transport (it is part of the config domain); these cover
runtime failures. The CLI maps each class to a documented exit code.
"""

__all__ = ["NumericalError", "DataIoError"]


class NumericalError(RuntimeError):
    """CFL violation, nonlinear non-convergence, NaN loss, unstable A, etc."""


class DataIoError(OSError):
    """Missing, malformed, or unwritable data files."""
