"""Continuous Hopfield memory: energy, single-step retrieval, multi-head
association, and pooling with a learned query.

The retrieval rule q' = X^T softmax(beta X q) is exactly softmax attention
over the stored patterns, so the association layer below is a drop-in for
multi-head attention and the pooling layer is one learned query attending
over the time axis.  Each operation exists twice: a plain numpy form for
analysis and tests, and a graph form (``*_graph``) that builds onto an
autodiff tape for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ConfigError, ShapeError

DEFAULT_POOL_HIDDEN = 2048


@dataclass
class HopfieldParams:
    """Shared knobs for association/pooling layers.

    beta defaults to 1/sqrt(d_head) (attention scaling) when left None;
    hidden_dim is the key/query association space used by pooling.
    """

    beta: float | None = None
    heads: int = 1
    hidden_dim: int = DEFAULT_POOL_HIDDEN

    def __post_init__(self):
        if self.beta is not None and self.beta <= 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    def resolve_beta(self, d_head: int) -> float:
        return 1.0 / math.sqrt(d_head) if self.beta is None else self.beta


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def hopfield_energy(x: np.ndarray, q: np.ndarray, beta: float) -> float:
    """E = -log-sum-exp(beta X q)/beta + q.q/2 + log(N)/beta + M^2/2 with
    M the largest stored-pattern norm; minimized by the retrieval update."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if x.ndim != 2 or q.shape != (x.shape[1],):
        raise ShapeError(f"pattern matrix {x.shape} and state {q.shape} disagree")
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta}")
    scores = beta * (x @ q)
    m = scores.max()
    lse = m + np.log(np.exp(scores - m).sum())
    big_m = np.sqrt((x * x).sum(axis=1).max())
    return float(-lse / beta + 0.5 * q @ q
                 + math.log(x.shape[0]) / beta + 0.5 * big_m**2)


def hopfield_update(x: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    """Single retrieval step q' = X^T softmax(beta X q); accepts one state
    vector or a batch of them as rows."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != q.shape[-1]:
        raise ShapeError(f"pattern matrix {x.shape} and state {q.shape} disagree")
    if beta < 0.0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    return _softmax(beta * (q @ x.T)) @ x


def hopfield_energy_graph(x: Var, q: Var, beta: float) -> Var:
    """Tape version of hopfield_energy; x is (N, d), q is (d,)."""
    n, d = x.shape
    scores = (x @ q.reshape((d, 1))).reshape((1, n)) * beta
    lse = ad.logsumexp(scores).sum() * (-1.0 / beta)
    sq = (q * q).sum() * 0.5
    msq = (x * x).sum(axis=1).max() * 0.5
    return lse + sq + msq + math.log(n) / beta


def hopfield_update_graph(x: Var, q: Var, beta: float) -> Var:
    """Tape version of hopfield_update for a single state vector."""
    n, d = x.shape
    scores = (x @ q.reshape((d, 1))).reshape((1, n)) * beta
    return (ad.softmax(scores) @ x).reshape((d,))


def association_graph(q: Var, k_src: Var, v_src: Var,
                      wq: Var, wk: Var, wv: Var, wo: Var,
                      beta: float, heads: int) -> Var:
    """Multi-head Hopfield association.

    Per head h: softmax(beta (Q Wq_h)(K Wk_h)^T)(V Wv_h); heads are
    concatenated and output-projected by wo.  Leading batch axes broadcast
    through matmul, so q may be (T, Fq) or (B, T, Fq) against (B, T, F)
    sources.  wq/wk are (Fq|F, heads*dk), wv is (F, heads*dv), wo is
    (heads*dv, F_out).
    """
    dk = wq.shape[1] // heads
    dv = wv.shape[1] // heads
    if wq.shape[1] != heads * dk or wk.shape[1] != heads * dk \
            or wv.shape[1] != heads * dv:
        raise ShapeError("projection widths must be divisible by head count")
    outs = []
    for h in range(heads):
        qh = q @ wq[:, h * dk:(h + 1) * dk]
        kh = k_src @ wk[:, h * dk:(h + 1) * dk]
        vh = v_src @ wv[:, h * dv:(h + 1) * dv]
        scores = (qh @ kh.transpose()) * beta
        outs.append(ad.softmax(scores) @ vh)
    stacked = outs[0] if heads == 1 else ad.concat(outs, axis=-1)
    return stacked @ wo


def hopfield_association(q: np.ndarray, k_src: np.ndarray, v_src: np.ndarray,
                         wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                         wo: np.ndarray, beta: float, heads: int) -> np.ndarray:
    """Numpy evaluation of association_graph on a throwaway tape."""
    tape = Tape()
    out = association_graph(
        tape.input("q", q), tape.input("k", k_src), tape.input("v", v_src),
        tape.input("wq", wq), tape.input("wk", wk), tape.input("wv", wv),
        tape.input("wo", wo), beta, heads)
    return out.value


def pooling_graph(x_seq: Var, query: Var,
                  wq: Var, wk: Var, wv: Var, wo: Var,
                  beta: float, heads: int) -> Var:
    """Pool a (B, T, F) sequence to (B, F_out): the single learned query
    attends over the T axis and the retrieved pattern replaces the sequence."""
    b = x_seq.shape[0]
    f_q = query.shape[0]
    pooled = association_graph(query.reshape((1, f_q)), x_seq, x_seq,
                               wq, wk, wv, wo, beta, heads)
    f_out = pooled.shape[-1]
    return pooled.reshape((b, f_out))


def hopfield_pooling(x_seq: np.ndarray, query: np.ndarray,
                     wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                     wo: np.ndarray, beta: float, heads: int) -> np.ndarray:
    """Numpy evaluation of pooling_graph on a throwaway tape."""
    tape = Tape()
    out = pooling_graph(
        tape.input("x", x_seq), tape.input("query", query),
        tape.input("wq", wq), tape.input("wk", wk), tape.input("wv", wv),
        tape.input("wo", wo), beta, heads)
    return out.value
