"""Exception types shared across the pipeline."""


class ToolsubError(Exception):
    """Base class for all library errors."""


class ParseError(ToolsubError):
    """A file could not be parsed; carries the offending location."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DegenerateCloudError(ToolsubError):
    """Point cloud too small or geometrically collapsed for the operation."""


class InsufficientExamplesError(ToolsubError):
    """Not enough positives/negatives to build training pairs for an action."""


class TrainingDivergedError(ToolsubError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )
