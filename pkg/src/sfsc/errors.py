"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration value is out of its valid range."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class InputError(ValueError):
    """Input data is empty, non-finite or otherwise malformed."""


class DegenerateChannelError(ValueError):
    """A channel or frame is degenerate (zero gain, all-zero frame)."""


class CapabilityError(RuntimeError):
    """The requested computation is not supported by the given object."""


class TrainingError(RuntimeError):
    """Training diverged. ``step`` records where it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class CheckpointError(RuntimeError):
    """Checkpoint is incompatible with the requested configuration or version."""
