"""Exception hierarchy shared by all modules.

Data problems derive from :class:`DataError`, numerical failures from
:class:`NumericalError`; the CLI maps the two families to distinct exit codes.
"""


class GarError(Exception):
    """Base class for every error raised by the package."""


class DataError(GarError, ValueError):
    pass


class NumericalError(GarError, ArithmeticError):
    pass


# --- data / input errors ---------------------------------------------------

class MalformedCsv(DataError):
    pass


class DuplicateColumn(DataError):
    pass


class NonMonotoneDates(DataError):
    pass


class NonPositiveForLog(DataError):
    pass


class TargetMissing(DataError):
    pass


class EmptyAfterAlignment(DataError):
    pass


class PlanOutOfRange(DataError):
    pass


class EmptyPanel(DataError):
    pass


class AllZeroWeights(DataError):
    pass


class AllLeavesEmpty(DataError):
    pass


class EmptyRecords(DataError):
    pass


class MisalignedRecords(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class PartitionIncomplete(DataError):
    pass


class PartitionOverlap(DataError):
    pass


class TooShort(DataError):
    pass


class InsufficientOverlap(DataError):
    pass


# --- numerical errors ------------------------------------------------------

class RankDeficient(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class DegeneratePredictor(NumericalError):
    pass


class NonPositiveLoss(NumericalError):
    pass


class NonStationarySolution(NumericalError):
    """Raised only when a caller asks for strict stationarity checks."""


class DegenerateSeries(NumericalError):
    """Zero-variance input where a scale is required."""
