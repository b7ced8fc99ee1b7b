"""Exception taxonomy shared across the toolkit.

The three top-level branches map onto the CLI exit codes: configuration
problems (1), bad input data (2), and runtime/numeric failures (3).
"""


class HopfolioError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HopfolioError):
    """Invalid run configuration or parameters."""


class DataError(HopfolioError):
    """Input data violates a precondition (format, range, alignment)."""


class ComputeError(HopfolioError):
    """Failure while computing (shape conflicts, degenerate inputs)."""


class ShapeError(ComputeError):
    """Tensor shapes incompatible with the requested operation."""


class NonFiniteError(ComputeError):
    """An operation produced NaN or infinity."""


class DegenerateSeriesError(ComputeError):
    """A return series has no variance (or no downside) where one is required."""


class DegenerateLossError(ComputeError):
    """In-batch loss undefined because realized returns have zero variance."""


class DegenerateGroupsError(ComputeError):
    """Pooled within-group variance is zero; the test statistic is undefined."""


class FoldUnusableError(ComputeError):
    """A cross-validation fold has too little history left after purging."""
