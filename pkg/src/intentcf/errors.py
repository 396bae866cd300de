"""Exception types shared across the package."""


class IntentcfError(Exception):
    """Base class for all package errors."""


class ShapeError(IntentcfError):
    """Operand shapes are incompatible. Message names both shapes."""


class ParameterError(IntentcfError):
    """A scalar argument or configuration value is out of range."""


class DataError(IntentcfError):
    """Rating / genre file could not be parsed or is empty."""


class TrainingError(IntentcfError):
    """Non-finite loss or gradient encountered during optimization."""


class CheckpointError(IntentcfError):
    """Checkpoint file is missing, truncated, corrupt or incompatible."""


class UsageError(IntentcfError):
    """Bad CLI flags or config file contents. Maps to exit code 2."""
