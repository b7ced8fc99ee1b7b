"""Price ingestion, log-returns, sliding-window batching, synthetic panels.

CSV is the single ingestion format: header ``date,<ticker1>,...,<tickerN>``,
one row per trading day, ISO-8601 dates, no missing cells.  Prices and
returns are held as dense float64 panels in header order.  All containers
are treated as immutable after construction.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

_BASE_PRICE = 100.0
_BASE_DATE = dt.date(2000, 1, 3)


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"invalid date {text!r} at row {row}") from exc


@dataclass
class PriceMatrix:
    """T x N panel of strictly positive prices with aligned dates."""

    dates: list[str]
    tickers: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        t, n = self.values.shape
        if len(self.dates) != t or len(self.tickers) != n:
            raise DataError("price panel dimensions do not match labels")
        if t < 2:
            raise DataError(f"need at least 2 price rows, got {t}")
        if n < 2:
            raise DataError(f"need at least 2 assets, got {n}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite price value")
        if np.any(self.values <= 0.0):
            t_bad, n_bad = np.argwhere(self.values <= 0.0)[0]
            raise DataError(
                f"non-positive price at row {t_bad + 1}, "
                f"column {self.tickers[n_bad]}")
        parsed = [_parse_date(d, i + 1) for i, d in enumerate(self.dates)]
        for i in range(1, len(parsed)):
            if parsed[i] <= parsed[i - 1]:
                raise DataError(f"non-increasing dates at row {i + 1}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        lines = ["date," + ",".join(self.tickers)]
        for date, row in zip(self.dates, self.values):
            lines.append(date + "," + ",".join(repr(float(x)) for x in row))
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ReturnMatrix:
    """(T-1) x N panel of daily log-returns."""

    dates: list[str]
    tickers: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        t, n = self.values.shape
        if len(self.dates) != t or len(self.tickers) != n:
            raise DataError("return panel dimensions do not match labels")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite return value")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]


@dataclass
class BatchConfig:
    """Sliding-window parameters: lookback L rows per window, B windows per
    batch."""

    lookback: int = 128
    batch_size: int = 32

    def __post_init__(self):
        if self.lookback < 2:
            raise ConfigError(f"lookback must be >= 2, got {self.lookback}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class BatchSet:
    """All length-L windows of a row range, each shifted by one row from the
    previous, grouped into batches of at most B (final partial batch kept)."""

    windows: np.ndarray  # (W, L, N)
    origins: np.ndarray  # (W,)
    batch_size: int

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    def batches(self):
        for lo in range(0, self.n_windows, self.batch_size):
            hi = min(lo + self.batch_size, self.n_windows)
            yield self.windows[lo:hi], self.origins[lo:hi]


@dataclass
class DatasetManifest:
    name: str
    n_assets: int
    start: str
    end: str
    path: str

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "n_assets": self.n_assets,
             "start": self.start, "end": self.end, "path": self.path},
            separators=(",", ":"))


def load_prices(path: str | Path) -> PriceMatrix:
    """Read a ``date,<tickers...>`` CSV into a validated PriceMatrix."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"price file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"empty price file: {path}")
    header = rows[0]
    if len(header) < 3 or header[0].strip().lower() != "date":
        raise DataError("header must be 'date,<ticker1>,...,<tickerN>'")
    tickers = [t.strip() for t in header[1:]]
    if len(set(tickers)) != len(tickers):
        raise DataError("duplicate ticker in header")
    dates: list[str] = []
    values = np.empty((len(rows) - 1, len(tickers)), dtype=np.float64)
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells, expected {len(header)}")
        dates.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            text = cell.strip()
            if not text:
                raise DataError(
                    f"missing value at row {i}, column {tickers[j]}")
            try:
                x = float(text)
            except ValueError as exc:
                raise DataError(
                    f"non-numeric value {text!r} at row {i}, "
                    f"column {tickers[j]}") from exc
            if math.isnan(x) or math.isinf(x):
                raise DataError(
                    f"missing value at row {i}, column {tickers[j]}")
            values[i - 1, j] = x
    return PriceMatrix(dates, tickers, values)


def compute_log_returns(p: PriceMatrix) -> ReturnMatrix:
    """Daily log-returns: value[t][i] = log P[t+1][i] - log P[t][i]."""
    values = np.diff(np.log(p.values), axis=0)
    return ReturnMatrix(p.dates[1:], list(p.tickers), values)


def make_batches(r: ReturnMatrix, cfg: BatchConfig, start: int, end: int) -> BatchSet:
    """Window the half-open row range [start, end) into a BatchSet."""
    if not 0 <= start < end <= r.n_rows:
        raise DataError(f"row range [{start}, {end}) outside panel of {r.n_rows}")
    length = end - start
    if length < cfg.lookback:
        raise DataError(
            f"insufficient history: range length {length} < lookback {cfg.lookback}")
    origins = np.arange(start, end - cfg.lookback + 1)
    windows = np.stack([r.values[o:o + cfg.lookback] for o in origins])
    return BatchSet(windows, origins, cfg.batch_size)


def windows_with_targets(r: ReturnMatrix, cfg: BatchConfig,
                         segments: list[tuple[int, int]]):
    """Training windows and their next-step return rows.

    Each segment is windowed independently (windows never cross a segment
    boundary), and a window [o, o+L) is paired with return row o+L, the row
    its weights would be applied to.  Segments too short to hold a window
    plus its target contribute nothing.
    """
    l = cfg.lookback
    win_parts, tgt_parts, org_parts = [], [], []
    for start, end in segments:
        if not 0 <= start <= end <= r.n_rows:
            raise DataError(f"segment [{start}, {end}) outside panel")
        for o in range(start, end - l):
            win_parts.append(r.values[o:o + l])
            tgt_parts.append(r.values[o + l])
            org_parts.append(o)
    n = r.n_assets
    if not win_parts:
        return (np.empty((0, l, n)), np.empty((0, n)), np.empty(0, dtype=int))
    return (np.stack(win_parts), np.stack(tgt_parts),
            np.asarray(org_parts, dtype=int))


def synth_gbm(n_assets: int, n_days: int, drifts, vols, corr, seed: int,
              base_price: float = _BASE_PRICE) -> PriceMatrix:
    """Geometric-Brownian-motion price paths, deterministic per seed.

    ``drifts`` are mean daily log-returns, ``vols`` daily log-return
    standard deviations, ``corr`` the cross-asset correlation of the
    driving noise.  With all vols zero, prices follow exp(drift * t)
    exactly.
    """
    if n_assets < 2 or n_days < 2:
        raise DataError("need n_assets >= 2 and n_days >= 2")
    drifts = np.asarray(drifts, dtype=np.float64)
    vols = np.asarray(vols, dtype=np.float64)
    corr = np.asarray(corr, dtype=np.float64)
    if drifts.shape != (n_assets,) or vols.shape != (n_assets,):
        raise DataError("drifts and vols must have one entry per asset")
    if np.any(vols < 0.0):
        raise DataError("volatilities must be nonnegative")
    if corr.shape != (n_assets, n_assets):
        raise DataError("correlation matrix shape mismatch")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise DataError("correlation matrix not symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise DataError("correlation matrix diagonal must be 1")
    eigvals, eigvecs = np.linalg.eigh(corr)
    if np.any(eigvals < -1e-8):
        raise DataError("correlation matrix not positive semi-definite")
    factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_days - 1, n_assets))
    increments = drifts + (z @ factor.T) * vols
    log_prices = np.vstack([np.zeros(n_assets), np.cumsum(increments, axis=0)])
    values = base_price * np.exp(log_prices)
    dates = [(_BASE_DATE + dt.timedelta(days=i)).isoformat()
             for i in range(n_days)]
    tickers = [f"A{i}" for i in range(n_assets)]
    return PriceMatrix(dates, tickers, values)


def synth_panel(n_assets: int, n_days: int, seed: int,
                hot_asset: int | None = None,
                base_drift: float = 4e-4, base_vol: float = 0.02,
                hot_drift: float = 3e-3, hot_vol: float = 0.015,
                rho: float = 0.0) -> PriceMatrix:
    """Convenience panel: homogeneous assets, optionally one high-Sharpe
    asset.  Per-asset true daily Sharpe is drift/vol by construction."""
    drifts = np.full(n_assets, base_drift)
    vols = np.full(n_assets, base_vol)
    if hot_asset is not None:
        if not 0 <= hot_asset < n_assets:
            raise ConfigError(f"hot_asset {hot_asset} outside [0, {n_assets})")
        drifts[hot_asset] = hot_drift
        vols[hot_asset] = hot_vol
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must be in [0, 1), got {rho}")
    corr = np.full((n_assets, n_assets), rho)
    np.fill_diagonal(corr, 1.0)
    return synth_gbm(n_assets, n_days, drifts, vols, corr, seed)
