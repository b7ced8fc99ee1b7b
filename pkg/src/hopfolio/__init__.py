"""Portfolio allocation with continuous Hopfield networks, classical
baselines, and a combinatorial purged cross-validation harness."""

__version__ = "0.1.0"

from .errors import (ComputeError, ConfigError, DataError, HopfolioError)

__all__ = ["__version__", "HopfolioError", "ConfigError", "DataError",
           "ComputeError"]
