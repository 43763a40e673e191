"""Exception hierarchy.

Everything raised deliberately by leafnet derives from :class:`LeafnetError`,
so the CLI can map user/input failures to exit status 1 and let anything
else surface as an internal error (exit status 2).
"""


class LeafnetError(Exception):
    """Base class for expected, user-facing failures."""


class ShapeError(LeafnetError, ValueError):
    pass


class GraphError(LeafnetError):
    pass


class ConfigError(LeafnetError):
    pass


class DataError(LeafnetError):
    pass


class TrainingDivergedError(LeafnetError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {value}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(LeafnetError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
