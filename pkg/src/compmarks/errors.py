"""Exception hierarchy.

The CLI maps each family onto an exit code: configuration problems exit
with 2, data problems with 3 and numeric failures with 4.
"""


class CompmarksError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CompmarksError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(CompmarksError, ValueError):
    """Input data violates a documented precondition."""


class NumericError(CompmarksError, ArithmeticError):
    """A computation cannot produce a meaningful result."""


class ZeroPartError(DataError):
    """A composition has a zero or negative part under the reject policy."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class AllZeroError(DataError):
    """A composition has no positive mass at all."""


class BadIndexError(DataError, IndexError):
    """An index (part, component or point) is out of range."""


class BadDimensionError(DataError):
    """A composition dimension below two was requested."""


class DimensionMismatchError(DataError):
    """Objects that must share a dimension do not."""


class ParseError(DataError):
    """A CSV field could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class OutsideWindowError(DataError):
    """A point lies outside the declared observation window."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class DegeneratePatternError(NumericError):
    """Fewer than two points, so no pair statistics exist."""


class EmptyGridError(ConfigError):
    """The distance grid has no usable points."""


class AllMaskedError(NumericError):
    """Every grid point is masked, so curves cannot be ranked."""


class EmptyInputError(DataError):
    """An aggregation received no observations."""


class TooFewPermutationsWarning(UserWarning):
    """``(s + 1) * alpha < 1``: the test can never reject."""
