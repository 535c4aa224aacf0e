"""Exception types raised across the toolkit.

Errors that point at a specific input row carry the 1-based row number of
the offending CSV record in ``row``.
"""


class MixlogitError(Exception):
    """Base class for all toolkit errors."""


class DataError(MixlogitError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class MissingColumn(DataError):
    pass


class DanglingRespondent(DataError):
    pass


class NonContiguousTask(DataError):
    pass


class ChosenUnavailable(DataError):
    pass


class UnknownBand(MixlogitError):
    pass


class SpecSyntaxError(MixlogitError):
    pass


class UnknownAttribute(SpecSyntaxError):
    pass


class DuplicateBinding(SpecSyntaxError):
    pass


class BlockMemberNotRandom(SpecSyntaxError):
    pass


class DimensionMismatch(MixlogitError):
    pass


class DimUnsupported(MixlogitError):
    pass


class EstimationError(MixlogitError):
    """Optimizer failures; ``last`` carries the last iterate (theta, loglik)."""

    def __init__(self, message, last=None):
        self.last = last
        super().__init__(message)


class MaxIterations(EstimationError):
    pass


class LineSearchFailure(EstimationError):
    pass


class NonFiniteObjective(EstimationError):
    pass


class NonFiniteEntry(MixlogitError):
    pass


class NotNegativeDefinite(MixlogitError):
    pass


class CovNotPSD(MixlogitError):
    pass


class MissingCoefficient(MixlogitError):
    pass


class NonPositiveIncome(MixlogitError):
    pass


class NegativeStatistic(MixlogitError):
    pass


class NonPositiveStatusQuo(MixlogitError):
    pass


class TooManyAttributesForArray(MixlogitError):
    pass


class BindingMismatch(MixlogitError):
    pass


class DataHashMismatch(MixlogitError):
    pass
