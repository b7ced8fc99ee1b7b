"""Declarative run configuration: one JSON file, validated by pydantic,
with a handful of CLI flag overrides layered on top."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .errors import ConfigError

ALLOCATOR_NAMES = ("EW", "MVO", "HRP", "LSTM", "HOP-POOL", "HOP-TRA")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSpec(_Strict):
    n_assets: int = 10
    n_days: int = 2500
    seed: int | None = None  # None: inherit the run seed
    hot_asset: int | None = None
    base_drift: float = 4e-4
    base_vol: float = 0.02
    hot_drift: float = 3e-3
    hot_vol: float = 0.015
    rho: float = 0.0


class DataSpec(_Strict):
    csv: str | None = None
    synth: SynthSpec | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.csv is None) == (self.synth is None):
            raise ValueError("data needs exactly one of 'csv' or 'synth'")
        return self


class CpcvSettings(_Strict):
    n_groups: int = 10
    k_test: int = 8
    purge: int = 21
    embargo: int = 21

    @model_validator(mode="after")
    def _shape(self):
        if self.n_groups < 2:
            raise ValueError("n_groups must be >= 2")
        if not 1 <= self.k_test < self.n_groups:
            raise ValueError("k_test must be in [1, n_groups)")
        if self.purge < 0 or self.embargo < 0:
            raise ValueError("purge and embargo must be nonnegative")
        return self


class BatchSettings(_Strict):
    lookback: int = 128
    batch_size: int = 32

    @model_validator(mode="after")
    def _shape(self):
        if self.lookback < 2 or self.batch_size < 1:
            raise ValueError("need lookback >= 2 and batch_size >= 1")
        return self


class TrainSettings(_Strict):
    max_epochs: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    patience: int = 10
    loss: str = "sharpe"

    @model_validator(mode="after")
    def _shape(self):
        if self.loss not in ("sharpe", "volatility"):
            raise ValueError("loss must be 'sharpe' or 'volatility'")
        if self.max_epochs < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError("need max_epochs >= 1, lr > 0, patience >= 1")
        return self


class HopPoolSettings(_Strict):
    hidden_dim: int = 2048
    heads: int = 1
    beta: float | None = None
    use_time2vec: bool = False
    t2v_k: int = 7


class HopTraSettings(_Strict):
    embed_dim: int = 128
    n_blocks: int = 4
    heads: int = 8
    beta: float | None = None
    t2v_k: int = 7


class LstmSettings(_Strict):
    hidden: int = 64


class MetricsSettings(_Strict):
    periods_per_year: int = 252
    risk_free: float = 0.0


class RunConfig(_Strict):
    data: DataSpec
    allocators: list[str] = ["EW"]
    cpcv: CpcvSettings = CpcvSettings()
    batch: BatchSettings = BatchSettings()
    train: TrainSettings = TrainSettings()
    hop_pool: HopPoolSettings = HopPoolSettings()
    hop_tra: HopTraSettings = HopTraSettings()
    lstm: LstmSettings = LstmSettings()
    metrics: MetricsSettings = MetricsSettings()
    alpha: float = 0.05
    seed: int = 0
    jobs: int = 1
    out: str = "results"

    @model_validator(mode="after")
    def _shape(self):
        if not self.allocators:
            raise ValueError("need at least one allocator")
        bad = [a for a in self.allocators if a not in ALLOCATOR_NAMES]
        if bad:
            raise ValueError(
                f"unknown allocators {bad}; valid: {list(ALLOCATOR_NAMES)}")
        if len(set(self.allocators)) != len(self.allocators):
            raise ValueError("duplicate allocator")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self


def parse_run_config(payload: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_run_config(payload)


def apply_overrides(cfg: RunConfig, seed: int | None = None,
                    out: str | None = None,
                    allocators: list[str] | None = None,
                    alpha: float | None = None,
                    jobs: int | None = None) -> RunConfig:
    update = {}
    if seed is not None:
        update["seed"] = seed
    if out is not None:
        update["out"] = out
    if allocators is not None:
        update["allocators"] = allocators
    if alpha is not None:
        update["alpha"] = alpha
    if jobs is not None:
        update["jobs"] = jobs
    if not update:
        return cfg
    try:
        return RunConfig.model_validate(cfg.model_dump() | update)
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {exc}") from exc
