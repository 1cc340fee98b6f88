"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3,
DataFormatError -> 4. Every toolkit exception also derives from the builtin
that best matches it, so callers that catch ValueError or IOError keep
working.
"""


class RobustGumError(Exception):
    """Base class for every error the toolkit raises deliberately."""


class ConfigError(RobustGumError, ValueError):
    """Invalid or inconsistent configuration (unknown keys, bad values)."""


class ShapeError(RobustGumError, ValueError):
    """Array dimensions do not match the declared interface."""


class NumericError(RobustGumError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class DegenerateCovarianceError(NumericError):
    """Covariance could not be made positive definite."""


class AllOutlierError(RobustGumError, RuntimeError):
    """EM assigned (numerically) zero inlier mass to some unit.

    The trainer treats this as the trivial-solution signal and returns the
    model it had before the failing EM run.
    """

    def __init__(self, unit_index):
        super().__init__(f"all samples classified as outliers in unit {unit_index}")
        self.unit_index = unit_index


class DataFormatError(RobustGumError, IOError):
    """A model or dataset file could not be parsed."""
