"""Portfolio return series and the four reported performance metrics.

Conventions: 252 trading days per year, zero risk-free rate (both
configurable), sample (n-1) standard deviation for the Sharpe ratio, and
target-0 downside deviation for the Sortino ratio.  Wealth curves compound
as exp of cumulative log-returns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import ReturnMatrix
from .errors import DataError, DegenerateSeriesError

TRADING_DAYS = 252
RISK_FREE = 0.0

_SIMPLEX_TOL = 1e-6


@dataclass
class PortfolioSeries:
    """Per-day portfolio log-returns, optionally date-aligned."""

    values: np.ndarray
    dates: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DataError("portfolio series must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite portfolio return")
        if self.dates is not None and len(self.dates) != len(self.values):
            raise DataError("series dates do not match values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class MetricsReport:
    """Annualized mean return, Sharpe, Sortino, and average drawdown."""

    mean_annual: float
    sharpe_annual: float
    sortino_annual: float
    avg_drawdown: float

    _FIELDS = ("mean_annual", "sharpe_annual", "sortino_annual", "avg_drawdown")

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in self._FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def check_simplex(w: np.ndarray, tol: float = _SIMPLEX_TOL) -> np.ndarray:
    """Validate a long-only weight vector: entries >= 0, sum 1, within tol."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise DataError("weight vector must be one-dimensional")
    if np.any(w < -tol):
        raise DataError(f"negative weight {w.min():.3e} beyond tolerance")
    if abs(w.sum() - 1.0) > tol:
        raise DataError(f"weights sum to {w.sum():.8f}, expected 1")
    return w


def portfolio_returns(w: np.ndarray, r: ReturnMatrix | np.ndarray,
                      dates: list[str] | None = None) -> PortfolioSeries:
    """R_p(t) = w . R(t) row by row."""
    if isinstance(r, ReturnMatrix):
        values = r.values
        if dates is None:
            dates = list(r.dates)
    else:
        values = np.asarray(r, dtype=np.float64)
    w = check_simplex(w)
    if values.ndim != 2 or values.shape[1] != w.shape[0]:
        raise DataError(
            f"weight length {w.shape[0]} does not match {values.shape} returns")
    return PortfolioSeries(values @ w, dates)


def sharpe_ratio(s: PortfolioSeries | np.ndarray,
                 risk_free: float = RISK_FREE,
                 periods: int = TRADING_DAYS) -> float:
    values = s.values if isinstance(s, PortfolioSeries) else np.asarray(s)
    if values.size < 2:
        raise DegenerateSeriesError("need at least 2 observations")
    std = values.std(ddof=1)
    if std == 0.0:
        raise DegenerateSeriesError("degenerate series: zero variance")
    return float(np.sqrt(periods) * (values.mean() - risk_free / periods) / std)


def sortino_ratio(s: PortfolioSeries | np.ndarray,
                  risk_free: float = RISK_FREE,
                  periods: int = TRADING_DAYS) -> float:
    """Mean over downside deviation, where the deviation averages squared
    clipped returns over all observations (target 0)."""
    values = s.values if isinstance(s, PortfolioSeries) else np.asarray(s)
    if values.size < 1:
        raise DegenerateSeriesError("empty series")
    downside = np.minimum(values, 0.0)
    if not np.any(downside < 0.0):
        raise DegenerateSeriesError("undefined downside deviation: no negative returns")
    sigma_d = np.sqrt(np.mean(downside**2))
    return float(np.sqrt(periods) * (values.mean() - risk_free / periods) / sigma_d)


def average_drawdown(s: PortfolioSeries | np.ndarray) -> float:
    """Mean over time of 1 - wealth / running peak wealth."""
    values = s.values if isinstance(s, PortfolioSeries) else np.asarray(s)
    if values.size < 1:
        raise DegenerateSeriesError("empty series")
    wealth = np.exp(np.cumsum(values))
    drawdown = 1.0 - wealth / np.maximum.accumulate(wealth)
    return float(drawdown.mean())


def annual_mean(s: PortfolioSeries | np.ndarray,
                periods: int = TRADING_DAYS) -> float:
    values = s.values if isinstance(s, PortfolioSeries) else np.asarray(s)
    return float(periods * values.mean())


def compute_report(s: PortfolioSeries, risk_free: float = RISK_FREE,
                   periods: int = TRADING_DAYS) -> MetricsReport:
    return MetricsReport(
        mean_annual=annual_mean(s, periods),
        sharpe_annual=sharpe_ratio(s, risk_free, periods),
        sortino_annual=sortino_ratio(s, risk_free, periods),
        avg_drawdown=average_drawdown(s),
    )
