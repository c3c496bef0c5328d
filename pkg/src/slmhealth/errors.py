"""Exception hierarchy shared by every stage of the pipeline.

The harness maps the three top-level families onto process exit codes:
``ConfigError`` -> 2, ``BackendError`` -> 3, ``DataError`` -> 4.
"""

from __future__ import annotations


class BenchError(Exception):
    """Base class for all harness errors."""


class ContractError(BenchError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(BenchError):
    pass


class DataError(BenchError):
    pass


class SchemaError(DataError):
    pass


class RowError(DataError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class IntegrityError(DataError):
    pass


class UndefinedMetricError(BenchError, ValueError):
    """Metric requested over zero retained pairs."""


class BackendError(BenchError):
    retryable = False


class TransportError(BackendError):
    """Backend unreachable or crashed mid-request."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class CapacityError(BackendError):
    """Prompt does not fit the backend's context window."""


class EmptyGenerationError(BackendError):
    """The backend closed the stream before producing any token."""


class TimestampError(BackendError):
    """Token timestamps went backwards. Never clamped, always surfaced."""
