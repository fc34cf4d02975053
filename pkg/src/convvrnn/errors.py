"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration object violates one of its invariants."""


class DimensionError(ValueError):
    """Tensor arguments do not have the shapes the operation requires."""


class ContractError(ValueError):
    """An argument violates an operation's calling contract (not a shape issue)."""


class DataError(RuntimeError):
    """A dataset directory or file cannot be read as expected."""


class ParseError(DataError):
    """A text file (e.g. a label file) contains malformed content."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. the objective became non-finite)."""
