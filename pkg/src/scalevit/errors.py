"""Exception hierarchy shared across the pipeline.

Exceptions are grouped by how the CLI reports them: usage errors exit 1,
data errors exit 2, numerical failures exit 3.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(PipelineError):
    """Bad parameters or flag combinations."""

    exit_code = 1


class DataError(PipelineError):
    """Unreadable, corrupt, or empty input data."""

    exit_code = 2


class NumericalError(PipelineError):
    """Numerical failure (non-finite values, degenerate decompositions)."""

    exit_code = 3


class NonFiniteError(NumericalError):
    pass


class DegenerateDataError(NumericalError):
    pass


class OutOfRangeError(DataError):
    pass


class EmptyDataError(DataError):
    pass


class TooFewItemsError(UsageError):
    pass


class BadRangeError(UsageError):
    pass


class BadSizeError(UsageError):
    pass


class BadKError(UsageError):
    pass


class BadShapeError(UsageError):
    pass


class BadConfigError(UsageError):
    pass


class UnknownSubsetError(UsageError):
    pass


class FormatError(DataError):
    """Base for binary file-format violations."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumMismatchError(FormatError):
    pass
