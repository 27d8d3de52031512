"""Exception types shared across the package."""


class FusionlabError(Exception):
    """Base class for all package errors."""


class ShapeError(FusionlabError):
    """Operand shapes violate an operation's contract."""


class ConfigError(FusionlabError):
    """Invalid configuration value or combination."""


class DataError(FusionlabError):
    """Record contents violate the data contract (labels, splits, dims)."""


class TensorFileError(FusionlabError):
    """Tensor file is malformed: bad magic, truncated, or inconsistent."""


class EmptySplitError(FusionlabError):
    """Requested split contains no records."""


class MetricUndefinedError(FusionlabError):
    """Metric is undefined for the given inputs (e.g. single-class AUROC)."""


class TrainingDivergedError(FusionlabError):
    """Training hit a non-finite loss."""
