"""Exception hierarchy shared by the library and the command line."""


class TaskFCError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TaskFCError, ValueError):
    """An input violates a documented precondition."""


class EmptyBandError(InvalidArgumentError):
    """No evaluation frequency falls inside the requested band."""


class DegenerateInputError(TaskFCError, ValueError):
    """Input data are too degenerate for the computation (e.g. singular covariance)."""


class EstimationFailedError(TaskFCError, RuntimeError):
    """The computation ran but produced no usable value."""


class RankDeficientError(TaskFCError, ValueError):
    """A regression design matrix is not of full column rank."""
