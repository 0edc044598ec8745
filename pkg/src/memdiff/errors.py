"""Exception hierarchy mapped to CLI exit codes."""


class MemdiffError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class UsageError(MemdiffError):
    """Bad command line, unknown flag, unreadable or invalid config."""

    exit_code = 1


class DataError(MemdiffError):
    """Malformed input data: bad CSV cells, short segments, shape mismatches."""

    exit_code = 2


class NumericError(MemdiffError):
    """Non-finite values where finite ones are required."""

    exit_code = 3


class InvariantError(MemdiffError):
    """Internal invariant violated; indicates a bug or corrupted state."""

    exit_code = 4
