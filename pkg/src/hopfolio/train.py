"""AdamW training loop with early stopping, plus inference-time weight
averaging.

One loop trains one model for one cross-validation split.  The purged
training rows are sub-split 80/20 in temporal order (the validation block
is the final 20%), windows are built within each sub-block so none crosses
the cut, and the best-validation parameter snapshot is returned.  All
randomness flows through the caller-provided generator, so a fixed
(seed, split) pair reproduces training exactly regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape
from .data import BatchConfig, ReturnMatrix, make_batches, windows_with_targets
from .errors import ComputeError, ConfigError, DataError, FoldUnusableError
from .models import ModelSpec, forward_graph, init_params, loss_graph, model_forward

VALIDATION_FRACTION = 0.2


@dataclass
class TrainConfig:
    max_epochs: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    patience: int = 10

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0.0 or self.weight_decay < 0.0:
            raise ConfigError("eps must be positive and weight_decay nonnegative")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.items()},
                   v={k: np.zeros_like(a) for k, a in params.items()})


@dataclass
class EarlyStopState:
    best_loss: float = math.inf
    best_params: ParamStore | None = None
    epochs_since_improvement: int = 0

    def observe(self, loss: float, params: ParamStore) -> None:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_params = params.copy()
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray],
               state: AdamState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ComputeError(f"gradient shape mismatch for {name!r}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        params[name] = theta - cfg.lr * (update + cfg.weight_decay * theta)


def split_train_validation(segments: list[tuple[int, int]],
                           fraction: float = VALIDATION_FRACTION):
    """Cut the purged rows (in temporal order) so the final ``fraction``
    becomes validation; a segment straddling the cut is divided."""
    total = sum(e - s for s, e in segments)
    n_train = total - int(round(fraction * total))
    train_segs, val_segs = [], []
    seen = 0
    for s, e in segments:
        size = e - s
        if seen + size <= n_train:
            train_segs.append((s, e))
        elif seen >= n_train:
            val_segs.append((s, e))
        else:
            cut = s + (n_train - seen)
            train_segs.append((s, cut))
            val_segs.append((cut, e))
        seen += size
    return train_segs, val_segs


def _epoch_batches(windows: np.ndarray, targets: np.ndarray, batch_size: int):
    for lo in range(0, windows.shape[0], batch_size):
        hi = min(lo + batch_size, windows.shape[0])
        yield windows[lo:hi], targets[lo:hi]


def _validation_loss(spec: ModelSpec, params: ParamStore,
                     windows: np.ndarray, targets: np.ndarray,
                     batch_size: int) -> float:
    """One loss over all validation windows (not a mean of batch losses)."""
    realized = []
    for wb, tb in _epoch_batches(windows, targets, batch_size):
        weights = model_forward(spec, params, wb)
        realized.append((weights * tb).sum(axis=1))
    values = np.concatenate(realized)
    if values.size < 2:
        return math.inf
    std = values.std(ddof=1)
    if std == 0.0:
        return math.inf
    if spec.loss == "volatility":
        return float(std)
    return float(-values.mean() / std)


def train_model(spec: ModelSpec, r: ReturnMatrix,
                segments: list[tuple[int, int]],
                batch_cfg: BatchConfig, cfg: TrainConfig,
                rng: np.random.Generator):
    """Optimize a model on purged training segments.

    Returns (best ParamStore snapshot, history) where history rows are
    (epoch, mean train loss, validation loss).  Zero-variance batches are
    skipped; an epoch where every batch degenerates aborts.
    """
    if batch_cfg.batch_size < 2:
        raise ConfigError("deep training needs batch_size >= 2")
    train_segs, val_segs = split_train_validation(segments)
    tr_win, tr_tgt, _ = windows_with_targets(r, batch_cfg, train_segs)
    va_win, va_tgt, _ = windows_with_targets(r, batch_cfg, val_segs)
    if tr_win.shape[0] < 2:
        raise FoldUnusableError(
            f"fold unusable: {tr_win.shape[0]} training windows after purge")
    if va_win.shape[0] < 2:
        raise FoldUnusableError(
            f"fold unusable: {va_win.shape[0]} validation windows after purge")
    params = init_params(spec, rng)
    adam = AdamState.for_params(params)
    stop = EarlyStopState(best_params=params.copy())
    history: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        skipped = 0
        for wb, tb in _epoch_batches(tr_win, tr_tgt, batch_cfg.batch_size):
            if wb.shape[0] < 2:
                skipped += 1
                continue
            tape = Tape()
            weights = forward_graph(spec, tape, params.bind(tape), wb)
            realized = (weights.value * tb).sum(axis=1)
            if realized.std(ddof=1) == 0.0:
                skipped += 1
                continue
            loss = loss_graph(tape, weights, tb, spec.loss)
            grads = tape.backward(loss)
            adamw_step(params, grads, adam, cfg)
            losses.append(loss.value.item())
        if not losses:
            raise ComputeError(
                f"all {skipped} batches degenerate in epoch {epoch}")
        val_loss = _validation_loss(spec, params, va_win, va_tgt,
                                    batch_cfg.batch_size)
        history.append((epoch, float(np.mean(losses)), val_loss))
        stop.observe(val_loss, params)
        if stop.epochs_since_improvement >= cfg.patience:
            break
    return stop.best_params, history


def infer_weights(spec: ModelSpec, params: ParamStore, r: ReturnMatrix,
                  segments: list[tuple[int, int]],
                  batch_cfg: BatchConfig) -> np.ndarray:
    """Arithmetic mean of predicted weight rows over every test window;
    segments shorter than the lookback contribute no windows."""
    rows: list[np.ndarray] = []
    for start, end in segments:
        if end - start < batch_cfg.lookback:
            continue
        batch_set = make_batches(r, batch_cfg, start, end)
        for wb, _ in batch_set.batches():
            rows.append(model_forward(spec, params, wb))
    if not rows:
        raise DataError("insufficient rows: no test window fits the lookback")
    return np.concatenate(rows, axis=0).mean(axis=0)


def history_to_csv(history: list[tuple[int, float, float]]) -> str:
    lines = ["epoch,train_loss,val_loss"]
    for epoch, tr, va in history:
        lines.append(f"{epoch},{repr(float(tr))},{repr(float(va))}")
    return "\n".join(lines) + "\n"
