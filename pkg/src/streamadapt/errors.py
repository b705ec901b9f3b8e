class StreamAdaptError(Exception):
    """Base class for package errors."""


class InvalidConfigError(StreamAdaptError, ValueError):
    """A configuration or stream specification violates its contract."""


class InvalidInputError(StreamAdaptError, ValueError):
    """Input data has the wrong shape or contains non-finite values."""


class TrainingDivergedError(StreamAdaptError, FloatingPointError):
    """The training loss became non-finite."""
