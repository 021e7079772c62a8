"""Exception types shared across the package."""


class TinetError(Exception):
    """Base class for errors raised by tinet."""


class DataError(TinetError, ValueError):
    """Malformed or out-of-contract input data (files, clouds, manifests)."""


class DegenerateCloudError(DataError):
    """Cloud with zero spatial spread where a scale is required."""


class NumericalError(TinetError, FloatingPointError):
    """A computation produced non-finite values."""


class CheckpointError(DataError):
    """Checkpoint file that cannot be read back into the requested model."""


class NotFittedError(TinetError, AttributeError):
    """Estimator used before ``fit``."""
