"""Allocation models: Hopfield pooling, Hopfield encoder, LSTM baseline.

Every architecture maps a (B, L, N) batch of return windows to B rows of
long-only portfolio weights via a linear head and a softmax, and trains
against the negative in-batch Sharpe ratio of the realized next-step
returns (or the batch volatility in ``volatility`` mode).

Time2Vec embeds the within-window step index t = 0..L-1 (one linear plus K
periodic components per asset, concatenated along the feature axis), so
windows are translation-comparable across the panel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .errors import ConfigError, DegenerateLossError, ShapeError
from .hopfield import association_graph, pooling_graph

MODEL_KINDS = ("HOP-POOL", "HOP-TRA", "LSTM")
LOSS_KINDS = ("sharpe", "volatility")


@dataclass
class Time2VecParams:
    """One linear component (k=0) and K periodic sine components."""

    omega: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.omega.shape != self.phi.shape or self.omega.ndim != 1:
            raise ConfigError("omega and phi must be equal-length vectors")

    @property
    def k(self) -> int:
        return self.omega.shape[0] - 1


def time2vec_embed(series: np.ndarray, p: Time2VecParams) -> np.ndarray:
    """T x (K+1) embedding of a single asset's window; depends only on the
    window length (the step index plays the role of time)."""
    t = np.arange(len(np.asarray(series)), dtype=np.float64)
    raw = np.outer(t, p.omega) + p.phi
    out = raw.copy()
    out[:, 1:] = np.sin(raw[:, 1:])
    return out


@dataclass
class ModelSpec:
    """Architecture choice plus every hyperparameter the builders need."""

    kind: str
    n_assets: int
    lookback: int
    loss: str = "sharpe"
    # Hopfield pooling
    hidden_dim: int = 2048
    pool_heads: int = 1
    use_time2vec: bool = False
    # Hopfield encoder
    embed_dim: int = 128
    n_blocks: int = 4
    tra_heads: int = 8
    # shared
    t2v_k: int = 7
    beta: float | None = None
    # LSTM
    lstm_hidden: int = 64

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.n_assets < 2 or self.lookback < 2:
            raise ConfigError("need n_assets >= 2 and lookback >= 2")
        if self.beta is not None and self.beta <= 0.0:
            raise ConfigError("beta must be positive")
        if self.t2v_k < 1:
            raise ConfigError("t2v_k must be >= 1")
        if self.kind == "HOP-POOL" and self.hidden_dim % self.pool_heads:
            raise ConfigError("hidden_dim must be divisible by pool_heads")
        if self.kind == "HOP-TRA" and self.embed_dim % self.tra_heads:
            raise ConfigError("embed_dim must be divisible by tra_heads")

    @property
    def pool_features(self) -> int:
        # raw returns, optionally widened by the Time2Vec block
        n = self.n_assets
        return n + n * (self.t2v_k + 1) if self.use_time2vec else n

    @property
    def tra_features(self) -> int:
        return self.n_assets * (self.t2v_k + 2)


def _normal(rng: np.random.Generator, shape: tuple[int, ...], std: float):
    return rng.normal(0.0, std, size=shape)


def _t2v_params(store: ParamStore, rng: np.random.Generator, prefix: str,
                n: int, k: int) -> None:
    store.add(f"{prefix}.omega_lin", rng.uniform(0.0, 1.0, size=n))
    store.add(f"{prefix}.phi_lin", np.zeros(n))
    store.add(f"{prefix}.omega_per", rng.uniform(0.0, 1.0, size=n * k))
    store.add(f"{prefix}.phi_per", np.zeros(n * k))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamStore:
    """Fresh trainable tensors; insertion order fixes checkpoint order.

    Linear and projection weights draw from N(0, 1/sqrt(fan_in)), biases
    start at zero, layer-norm gains at one, Time2Vec frequencies from
    U(0, 1), and the pooling query from N(0, 0.02).
    """
    store = ParamStore()
    n = spec.n_assets
    if spec.kind == "HOP-POOL":
        if spec.use_time2vec:
            _t2v_params(store, rng, "t2v", n, spec.t2v_k)
        f = spec.pool_features
        dk_total = spec.hidden_dim
        dv_total = spec.pool_heads * f
        store.add("pool.query", _normal(rng, (f,), 0.02))
        store.add("pool.wq", _normal(rng, (f, dk_total), 1.0 / math.sqrt(f)))
        store.add("pool.wk", _normal(rng, (f, dk_total), 1.0 / math.sqrt(f)))
        store.add("pool.wv", _normal(rng, (f, dv_total), 1.0 / math.sqrt(f)))
        store.add("pool.wo", _normal(rng, (dv_total, f), 1.0 / math.sqrt(dv_total)))
        store.add("head.w", _normal(rng, (f, n), 1.0 / math.sqrt(f)))
        store.add("head.b", np.zeros(n))
    elif spec.kind == "HOP-TRA":
        _t2v_params(store, rng, "t2v", n, spec.t2v_k)
        d = spec.embed_dim
        f_in = spec.tra_features
        store.add("embed.w", _normal(rng, (f_in, d), 1.0 / math.sqrt(f_in)))
        store.add("embed.b", np.zeros(d))
        std = 1.0 / math.sqrt(d)
        for i in range(spec.n_blocks):
            pre = f"block{i}"
            for name in ("wq", "wk", "wv", "wo"):
                store.add(f"{pre}.attn.{name}", _normal(rng, (d, d), std))
            store.add(f"{pre}.ln1.g", np.ones(d))
            store.add(f"{pre}.ln1.b", np.zeros(d))
            store.add(f"{pre}.mlp.w1", _normal(rng, (d, 4 * d), std))
            store.add(f"{pre}.mlp.b1", np.zeros(4 * d))
            store.add(f"{pre}.mlp.w2", _normal(rng, (4 * d, d),
                                               1.0 / math.sqrt(4 * d)))
            store.add(f"{pre}.mlp.b2", np.zeros(d))
            store.add(f"{pre}.ln2.g", np.ones(d))
            store.add(f"{pre}.ln2.b", np.zeros(d))
        store.add("head.w", _normal(rng, (d, n), std))
        store.add("head.b", np.zeros(n))
    else:  # LSTM
        h = spec.lstm_hidden
        store.add("lstm.wx", _normal(rng, (n, 4 * h), 1.0 / math.sqrt(n)))
        store.add("lstm.wh", _normal(rng, (h, 4 * h), 1.0 / math.sqrt(h)))
        store.add("lstm.b", np.zeros(4 * h))
        store.add("head.w", _normal(rng, (h, n), 1.0 / math.sqrt(h)))
        store.add("head.b", np.zeros(n))
    return store


def _t2v_block_graph(tape: Tape, pv: dict[str, Var], prefix: str,
                     length: int, n: int, k: int) -> Var:
    """(L, N*(K+1)) Time2Vec feature block shared by every batch element:
    the per-asset linear columns first, then the per-asset periodic ones."""
    t = tape.constant(np.arange(length, dtype=np.float64).reshape(length, 1))
    lin = t @ pv[f"{prefix}.omega_lin"].reshape((1, n)) + pv[f"{prefix}.phi_lin"]
    per = t @ pv[f"{prefix}.omega_per"].reshape((1, n * k)) + pv[f"{prefix}.phi_per"]
    return ad.concat([lin, ad.sin(per)], axis=-1)


def _with_time2vec(tape: Tape, pv: dict[str, Var], batch_var: Var,
                   spec: ModelSpec) -> Var:
    b, l, n = batch_var.shape
    block = _t2v_block_graph(tape, pv, "t2v", l, n, spec.t2v_k)
    cols = block.shape[-1]
    block3 = block.reshape((1, l, cols)).broadcast_to((b, l, cols))
    return ad.concat([batch_var, block3], axis=-1)


def encoder_block_graph(x: Var, pv: dict[str, Var], prefix: str,
                        heads: int, beta: float) -> Var:
    """Residual Hopfield association then residual GELU MLP, each followed
    by layer normalization with a learned affine pair."""
    a = association_graph(x, x, x,
                          pv[f"{prefix}.attn.wq"], pv[f"{prefix}.attn.wk"],
                          pv[f"{prefix}.attn.wv"], pv[f"{prefix}.attn.wo"],
                          beta, heads)
    x1 = ad.layer_norm(a + x) * pv[f"{prefix}.ln1.g"] + pv[f"{prefix}.ln1.b"]
    m = ad.gelu(x1 @ pv[f"{prefix}.mlp.w1"] + pv[f"{prefix}.mlp.b1"])
    m = m @ pv[f"{prefix}.mlp.w2"] + pv[f"{prefix}.mlp.b2"]
    return ad.layer_norm(m + x1) * pv[f"{prefix}.ln2.g"] + pv[f"{prefix}.ln2.b"]


def forward_graph(spec: ModelSpec, tape: Tape, pv: dict[str, Var],
                  batch: np.ndarray) -> Var:
    """Build the weight-prediction graph for one batch; returns (B, N) rows
    that lie on the simplex by construction (softmax head)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[2] != spec.n_assets:
        raise ShapeError(f"batch shape {batch.shape} does not match spec")
    xv = tape.input("batch", batch)
    b = batch.shape[0]
    if spec.kind == "HOP-POOL":
        feats = _with_time2vec(tape, pv, xv, spec) if spec.use_time2vec else xv
        beta = spec.beta if spec.beta is not None \
            else 1.0 / math.sqrt(spec.hidden_dim // spec.pool_heads)
        pooled = pooling_graph(feats, pv["pool.query"],
                               pv["pool.wq"], pv["pool.wk"], pv["pool.wv"],
                               pv["pool.wo"], beta, spec.pool_heads)
        logits = pooled @ pv["head.w"] + pv["head.b"]
    elif spec.kind == "HOP-TRA":
        feats = _with_time2vec(tape, pv, xv, spec)
        x = feats @ pv["embed.w"] + pv["embed.b"]
        beta = spec.beta if spec.beta is not None \
            else 1.0 / math.sqrt(spec.embed_dim // spec.tra_heads)
        for i in range(spec.n_blocks):
            x = encoder_block_graph(x, pv, f"block{i}", spec.tra_heads, beta)
        logits = x.mean(axis=1) @ pv["head.w"] + pv["head.b"]
    else:  # LSTM
        h_dim = spec.lstm_hidden
        h = tape.constant(np.zeros((b, h_dim)))
        c = tape.constant(np.zeros((b, h_dim)))
        wx, wh, bias = pv["lstm.wx"], pv["lstm.wh"], pv["lstm.b"]
        for t in range(batch.shape[1]):
            z = xv[:, t] @ wx + h @ wh + bias
            gate_i = ad.sigmoid(z[:, 0 * h_dim:1 * h_dim])
            gate_f = ad.sigmoid(z[:, 1 * h_dim:2 * h_dim])
            cand = ad.tanh(z[:, 2 * h_dim:3 * h_dim])
            gate_o = ad.sigmoid(z[:, 3 * h_dim:4 * h_dim])
            c = gate_f * c + gate_i * cand
            h = gate_o * ad.tanh(c)
        logits = h @ pv["head.w"] + pv["head.b"]
    return ad.softmax(logits)


def model_forward(spec: ModelSpec, store: ParamStore,
                  batch: np.ndarray) -> np.ndarray:
    """Predict weight rows with a throwaway tape (no gradients kept)."""
    tape = Tape()
    return forward_graph(spec, tape, store.bind(tape), batch).value


def hop_pool_forward(spec: ModelSpec, store: ParamStore, batch) -> np.ndarray:
    if spec.kind != "HOP-POOL":
        raise ConfigError(f"spec kind is {spec.kind}, expected HOP-POOL")
    return model_forward(spec, store, batch)


def hop_tra_forward(spec: ModelSpec, store: ParamStore, batch) -> np.ndarray:
    if spec.kind != "HOP-TRA":
        raise ConfigError(f"spec kind is {spec.kind}, expected HOP-TRA")
    return model_forward(spec, store, batch)


def lstm_forward(spec: ModelSpec, store: ParamStore, batch) -> np.ndarray:
    if spec.kind != "LSTM":
        raise ConfigError(f"spec kind is {spec.kind}, expected LSTM")
    return model_forward(spec, store, batch)


def realized_returns(weights: np.ndarray, next_returns: np.ndarray) -> np.ndarray:
    """Per-window portfolio return: each weight row dotted with the return
    row immediately following its window."""
    weights = np.asarray(weights, dtype=np.float64)
    next_returns = np.asarray(next_returns, dtype=np.float64)
    if weights.shape != next_returns.shape or weights.ndim != 2:
        raise ShapeError(
            f"weights {weights.shape} and next returns {next_returns.shape} disagree")
    return (weights * next_returns).sum(axis=1)


def sharpe_loss(weights: np.ndarray, next_returns: np.ndarray,
                mode: str = "sharpe") -> float:
    """Negative in-batch Sharpe of realized returns (no annualization), or
    the batch standard deviation in ``volatility`` mode."""
    realized = realized_returns(weights, next_returns)
    if realized.size < 2:
        raise DegenerateLossError("need at least 2 windows per batch")
    std = realized.std(ddof=1)
    if std == 0.0:
        raise DegenerateLossError("degenerate loss: zero in-batch variance")
    if mode == "volatility":
        return float(std)
    if mode != "sharpe":
        raise ConfigError(f"unknown loss mode {mode!r}")
    return float(-realized.mean() / std)


def loss_graph(tape: Tape, weights: Var, next_returns: np.ndarray,
               mode: str = "sharpe") -> Var:
    """Differentiable counterpart of sharpe_loss.

    Callers should reject zero-variance batches via sharpe_loss first; the
    graph itself would propagate a division blow-up as a non-finite error.
    """
    targets = tape.constant(np.asarray(next_returns, dtype=np.float64))
    realized = (weights * targets).sum(axis=1)
    std = realized.std(ddof=1)
    if mode == "volatility":
        return std
    return -(realized.mean() / std)
