"""Exception hierarchy shared by all modules.

ConfigError maps to CLI exit code 1, DataError (and subclasses) to exit
code 2.
"""


class BbnSimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BbnSimError):
    """Invalid or inconsistent configuration."""


class DataError(BbnSimError):
    """Malformed or irreconcilable input data."""


class TraceParseError(DataError):
    """A trace file row could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class TopologyError(DataError):
    """A route or link references a radio that the trace does not cover."""
