"""Exception hierarchy shared across the toolkit.

Each class carries the CLI exit code used when it escapes to the command
line: config=2, data=3, numeric=4, io=5.
"""


class GanCompressError(Exception):
    exit_code = 1


class ValidationError(GanCompressError):
    """Caller handed us inconsistent shapes, ids, or out-of-range values."""

    exit_code = 2


class ConfigError(GanCompressError):
    """Experiment config / manifest is malformed or references missing pieces."""

    exit_code = 2


class DataError(GanCompressError):
    """Dataset files missing, corrupt, or unreadable."""

    exit_code = 3


class NumericError(GanCompressError):
    """Non-finite values or a numeric routine that failed to converge."""

    exit_code = 4


class StorageError(GanCompressError):
    """Checkpoint or log I/O failed (bad container, checksum, version)."""

    exit_code = 5
