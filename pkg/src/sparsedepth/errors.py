"""Exception hierarchy shared by all modules."""


class SparseDepthError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SparseDepthError, ValueError):
    """Invalid configuration, shapes or parameters."""


class UsageError(SparseDepthError, ValueError):
    """An API was called in a way its contract forbids."""


class DegenerateMotionError(SparseDepthError):
    """Camera translation too small to define a metric scale."""


class DegenerateConfigurationError(SparseDepthError):
    """Triangulation system has no unique solution."""


class PointAtInfinityError(SparseDepthError):
    """A homogeneous point or projection has vanishing last coordinate."""


class EvaluationError(SparseDepthError, ValueError):
    """Metric inputs violate their preconditions."""


class FormatError(SparseDepthError, ValueError):
    """Malformed file contents."""


class TrainingDivergedError(SparseDepthError, FloatingPointError):
    """Non-finite loss or gradient during training.

    ``checkpoint`` holds the last parameter values known to be finite.
    """

    def __init__(self, message, checkpoint=None, step=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step
