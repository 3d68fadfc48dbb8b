"""
Exception types raised by the TabR services.
"""


class TabRError(Exception):
    """Base class for every error the library raises on purpose."""


class ConfigError(TabRError, ValueError):
    """Invalid configuration, shape mismatch or unsupported combination."""


class DatasetLoadError(TabRError):
    """A dataset directory could not be loaded or failed validation."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        location = ""
        if file is not None:
            location = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(f"{location}{message}")


class GradCheckError(TabRError):
    """Gradient check could not be run or produced a non-finite value."""

    def __init__(self, message: str, param_id: str | None = None):
        self.param_id = param_id
        super().__init__(message if param_id is None else f"{message} (parameter {param_id})")


class DivergenceError(TabRError):
    """Training produced a non-finite loss."""


class CheckpointError(TabRError):
    """Checkpoint container is malformed or does not match the model."""


class UnsupportedTaskError(TabRError):
    """Operation is not defined for the dataset's task type."""
