"""Exception types shared across the package."""


class SalmError(Exception):
    """Base class for package errors."""


class TrainingDivergedError(SalmError):
    """Loss or parameters went non-finite during optimization."""


class ContainerFormatError(SalmError):
    """A binary container failed to parse; carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class DatasetFormatError(ContainerFormatError):
    """Malformed dataset container."""


class NoiseFormatError(ContainerFormatError):
    """Malformed noise container."""


class CheckpointFormatError(ContainerFormatError):
    """Malformed model checkpoint."""


class ConfigError(SalmError):
    """Invalid or unknown experiment configuration."""
