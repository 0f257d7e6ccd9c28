"""
Exception hierarchy for the reflection separation system.

Every error raised on purpose by the package derives from DSRNetError so the
command-line layer can map it to an exit code.
"""

from typing import List, Optional


class DSRNetError(Exception):
    """Base class for all package errors."""
    pass


class ShapeError(DSRNetError, ValueError):
    """Raised when tensor or image shapes violate an operation's contract."""
    pass


class ChannelCountError(ShapeError):
    """Raised when a gate receives an odd number of channels."""
    pass


class ConfigurationError(DSRNetError, ValueError):
    """Raised for inconsistent or invalid configuration values."""
    pass


class DomainError(DSRNetError, ValueError):
    """Raised when values fall outside an operation's domain."""
    pass


class UsageError(DSRNetError):
    """Raised for command-line usage problems."""
    pass


class ResourceError(DSRNetError, OSError):
    """Raised when a file, directory or weight source is missing or unreadable."""
    pass


class IngestionError(ResourceError):
    """Raised when a dataset directory cannot be turned into a manifest."""

    def __init__(self, message: str, offenders: Optional[List[str]] = None):
        self.offenders = list(offenders or [])
        if self.offenders:
            message = f"{message}: {', '.join(self.offenders)}"
        super().__init__(message)


class CheckpointError(ResourceError):
    """Base class for checkpoint read failures."""
    pass


class CorruptCheckpointError(CheckpointError):
    """Raised for truncated or altered checkpoint files."""
    pass


class IncompatibleCheckpointError(CheckpointError):
    """Raised when a checkpoint carries a foreign format version."""
    pass


class DivergenceError(DSRNetError, ArithmeticError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, message: str, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
