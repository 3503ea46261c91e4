"""Exception types raised across the package."""


class BCSNNError(Exception):
    """Base class for package errors."""


class InvalidParameterError(BCSNNError, ValueError):
    pass


class DimensionError(BCSNNError, ValueError):
    pass


class ValidationError(BCSNNError, ValueError):
    pass


class TapeError(BCSNNError, RuntimeError):
    """Backward pass requested without a complete forward tape."""


class DatasetError(BCSNNError, ValueError):
    pass


class CheckpointError(BCSNNError, ValueError):
    """Checkpoint is unreadable or does not fit the requested model/data."""


class TrainingDivergedError(BCSNNError, FloatingPointError):
    pass
