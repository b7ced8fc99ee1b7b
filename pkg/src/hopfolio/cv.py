"""Combinatorial purged cross-validation and the backtest driver.

The return panel is cut into N contiguous near-equal groups; every C(N, k)
choice of k test groups is one split.  Purging removes training rows just
before each test block, an embargo removes rows just after, and the
(split, test-group) segments are reassembled into k*C(N,k)/N full-history
backtest paths, each covering every group exactly once.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .baselines import equal_weights, hrp_allocate, mvo_min_variance, sample_covariance
from .data import BatchConfig, ReturnMatrix
from .errors import ComputeError, ConfigError, FoldUnusableError
from .metrics import MetricsReport, PortfolioSeries, compute_report
from .models import ModelSpec
from .train import TrainConfig, infer_weights, train_model

ALLOCATORS = ("EW", "MVO", "HRP", "LSTM", "HOP-POOL", "HOP-TRA")
DEEP_ALLOCATORS = ("LSTM", "HOP-POOL", "HOP-TRA")
DEFAULT_PURGE = 21
DEFAULT_EMBARGO = 21


@dataclass
class GroupPartition:
    """Contiguous, ordered row intervals of near-equal size covering the
    panel; interval sizes differ by at most one."""

    n_rows: int
    intervals: list[tuple[int, int]]

    @property
    def n_groups(self) -> int:
        return len(self.intervals)


@dataclass
class SplitSpec:
    split_id: int
    test_groups: tuple[int, ...]
    raw_train_segments: list[tuple[int, int]]
    train_segments: list[tuple[int, int]]  # after purge and embargo
    test_segments: list[tuple[int, int]]   # adjacent test groups merged


@dataclass
class PathAssignment:
    """matrix[p, g] = id of the split whose test output fills group g on
    backtest path p; an exact cover of the (split, test-group) pairs."""

    matrix: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.matrix.shape[0]


@dataclass
class CpcvPlan:
    partition: GroupPartition
    splits: list[SplitSpec]
    paths: PathAssignment
    k_test: int
    purge: int
    embargo: int

    @property
    def n_splits(self) -> int:
        return len(self.splits)


@dataclass
class BacktestResult:
    allocator: str
    split_weights: np.ndarray            # (n_splits, N)
    path_series: list[PortfolioSeries]
    reports: list[MetricsReport]
    histories: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)


def make_partition(n_rows: int, n_groups: int) -> GroupPartition:
    if n_groups < 2:
        raise ConfigError(f"n_groups must be >= 2, got {n_groups}")
    if n_rows < n_groups:
        raise ConfigError(f"{n_rows} rows cannot form {n_groups} groups")
    base, extra = divmod(n_rows, n_groups)
    intervals = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        intervals.append((start, start + size))
        start += size
    return GroupPartition(n_rows, intervals)


def _merge_adjacent(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[tuple[int, int]] = []
    for s, e in intervals:
        if merged and merged[-1][1] == s:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    return merged


def purge_and_embargo(partition: GroupPartition, test_groups: tuple[int, ...],
                      purge: int, embargo: int,
                      min_train_rows: int = 0) -> list[tuple[int, int]]:
    """Training segments after leakage removal: drop any train row within
    ``purge`` rows before a test-group start or ``embargo`` rows after a
    test-group end; test rows themselves are untouched."""
    if purge < 0 or embargo < 0:
        raise ConfigError("purge and embargo must be nonnegative")
    keep = np.ones(partition.n_rows, dtype=bool)
    for g in test_groups:
        ts, te = partition.intervals[g]
        keep[ts:te] = False
    for g in test_groups:
        ts, te = partition.intervals[g]
        keep[max(0, ts - purge):ts] = False
        keep[te:min(partition.n_rows, te + embargo)] = False
    segments = []
    idx = np.flatnonzero(keep)
    if idx.size:
        breaks = np.flatnonzero(np.diff(idx) > 1)
        start = 0
        for b in list(breaks) + [idx.size - 1]:
            segments.append((int(idx[start]), int(idx[b]) + 1))
            start = b + 1
    total = sum(e - s for s, e in segments)
    if total < min_train_rows:
        raise FoldUnusableError(
            f"fold unusable: {total} purged training rows < {min_train_rows}")
    return segments


def build_cpcv_plan(n_rows: int, n_groups: int = 10, k_test: int = 8,
                    purge: int = DEFAULT_PURGE,
                    embargo: int = DEFAULT_EMBARGO) -> CpcvPlan:
    """All C(n_groups, k_test) splits plus the path assignment that fills
    each backtest path with every group exactly once (each split's test
    groups go to the lowest-numbered path still missing that group)."""
    if not 1 <= k_test < n_groups:
        raise ConfigError(f"k_test must be in [1, {n_groups}), got {k_test}")
    partition = make_partition(n_rows, n_groups)
    splits = []
    for split_id, combo in enumerate(combinations(range(n_groups), k_test)):
        test_iv = [partition.intervals[g] for g in combo]
        train_iv = [partition.intervals[g] for g in range(n_groups)
                    if g not in combo]
        splits.append(SplitSpec(
            split_id=split_id,
            test_groups=tuple(combo),
            raw_train_segments=_merge_adjacent(train_iv),
            train_segments=purge_and_embargo(partition, tuple(combo),
                                             purge, embargo),
            test_segments=_merge_adjacent(test_iv),
        ))
    n_paths = k_test * math.comb(n_groups, k_test) // n_groups
    matrix = np.full((n_paths, n_groups), -1, dtype=int)
    for split in splits:
        for g in split.test_groups:
            open_paths = np.flatnonzero(matrix[:, g] == -1)
            if open_paths.size == 0:
                raise ComputeError(f"no open path for group {g}")
            matrix[open_paths[0], g] = split.split_id
    if np.any(matrix < 0):
        raise ComputeError("path assignment left uncovered cells")
    return CpcvPlan(partition, splits, PathAssignment(matrix),
                    k_test, purge, embargo)


def fit_split_weights(allocator: str, split: SplitSpec, r: ReturnMatrix,
                      batch_cfg: BatchConfig, train_cfg: TrainConfig,
                      spec: ModelSpec | None, seed: int):
    """One weight vector for one split: classical allocators fit on the
    concatenated purged rows, deep allocators train then average their
    predictions over all test windows.  Returns (weights, history)."""
    if allocator == "EW":
        return equal_weights(r.n_assets), None
    if allocator in ("MVO", "HRP"):
        rows = np.concatenate([r.values[s:e] for s, e in split.train_segments])
        if allocator == "MVO":
            return mvo_min_variance(sample_covariance(rows)), None
        return hrp_allocate(rows), None
    if allocator not in DEEP_ALLOCATORS:
        raise ConfigError(f"unknown allocator {allocator!r}")
    if spec is None:
        raise ConfigError(f"allocator {allocator} needs a model spec")
    rng = np.random.default_rng((seed, split.split_id))
    params, history = train_model(spec, r, split.train_segments,
                                  batch_cfg, train_cfg, rng)
    weights = infer_weights(spec, params, r, split.test_segments, batch_cfg)
    return weights, history


def _fit_worker(args):
    allocator, split, r, batch_cfg, train_cfg, spec, seed = args
    weights, history = fit_split_weights(allocator, split, r, batch_cfg,
                                         train_cfg, spec, seed)
    return split.split_id, weights, history


def stitch_paths(plan: CpcvPlan, r: ReturnMatrix,
                 split_weights: np.ndarray) -> list[PortfolioSeries]:
    """Assemble each path's full-history return series from the per-(split,
    group) test segments; group order preserves the calendar."""
    series = []
    for p in range(plan.paths.n_paths):
        parts = []
        for g, (gs, ge) in enumerate(plan.partition.intervals):
            w = split_weights[plan.paths.matrix[p, g]]
            parts.append(r.values[gs:ge] @ w)
        series.append(PortfolioSeries(np.concatenate(parts), list(r.dates)))
    return series


def run_backtest(allocator: str, plan: CpcvPlan, r: ReturnMatrix,
                 batch_cfg: BatchConfig, train_cfg: TrainConfig,
                 spec: ModelSpec | None = None, seed: int = 0,
                 jobs: int = 1) -> BacktestResult:
    """Fit every split, stitch the paths, and report metrics per path.

    Splits are independent; with jobs > 1 they fit in separate processes.
    Results are keyed by split id, so scheduling never changes output.
    """
    if allocator not in ALLOCATORS:
        raise ConfigError(f"unknown allocator {allocator!r}")
    if plan.partition.n_rows != r.n_rows:
        raise ConfigError("plan was built for a different panel length")
    work = [(allocator, split, r, batch_cfg, train_cfg, spec, seed)
            for split in plan.splits]
    results: dict[int, tuple[np.ndarray, object]] = {}
    if jobs > 1 and allocator in DEEP_ALLOCATORS:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for split_id, weights, history in pool.map(_fit_worker, work):
                results[split_id] = (weights, history)
    else:
        for args in work:
            split_id, weights, history = _fit_worker(args)
            results[split_id] = (weights, history)
    split_weights = np.stack([results[s.split_id][0] for s in plan.splits])
    histories = {sid: h for sid, (_, h) in results.items() if h is not None}
    path_series = stitch_paths(plan, r, split_weights)
    reports = [compute_report(s) for s in path_series]
    return BacktestResult(allocator, split_weights, path_series,
                          reports, histories)
