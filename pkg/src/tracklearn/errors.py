"""Exception types shared across the package."""


class TrackLearnError(Exception):
    """Base class for all package errors."""


class DomainError(TrackLearnError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class UsageError(TrackLearnError, RuntimeError):
    """An object was used in a state that does not allow the call."""


class LoadError(TrackLearnError, OSError):
    """A checkpoint or data file could not be loaded or is incompatible."""


class ConfigError(TrackLearnError, ValueError):
    """A configuration tree failed validation."""

    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)
