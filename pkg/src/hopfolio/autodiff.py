"""Reverse-mode automatic differentiation on dense float64 tensors.

The engine is intentionally small.  A :class:`Tape` evaluates every operation
eagerly with numpy and records it, so forward values are always cached, the
whole computation can be replayed under different leaf bindings (which is how
the finite-difference checker works), and gradients fall out of one reverse
sweep.  Everything is float64; at the problem sizes this toolkit targets,
precision is cheaper than debugging float32 gradient noise.

Supported operations (each with a hand-written backward rule): add, subtract,
elementwise multiply/divide, scalar multiply/shift, matmul, transpose,
reshape, broadcast, concat, slice, exp, log, sin, sigmoid, tanh, gelu (tanh
approximation), softmax and log-sum-exp over the last axis, layer
normalization over the last axis, and the reductions sum, mean, standard
deviation, and max.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

Array = np.ndarray

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715
_LAYER_NORM_EPS = 1e-5


def _as_f64(value) -> Array:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _softmax_values(x: Array) -> Array:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid_values(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- forward rules: fn(parent_values, attrs) -> value -----------------------

def _fwd_add(v, a):
    return v[0] + v[1]


def _fwd_sub(v, a):
    return v[0] - v[1]


def _fwd_mul(v, a):
    return v[0] * v[1]


def _fwd_div(v, a):
    return v[0] / v[1]


def _fwd_scale(v, a):
    return v[0] * a["factor"]


def _fwd_shift(v, a):
    return v[0] + a["offset"]


def _fwd_matmul(v, a):
    x, y = v
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    return x @ y


def _fwd_transpose(v, a):
    axes = a["axes"]
    if axes is None:
        return np.swapaxes(v[0], -1, -2)
    return np.transpose(v[0], axes)


def _fwd_reshape(v, a):
    return v[0].reshape(a["shape"])


def _fwd_broadcast(v, a):
    return np.broadcast_to(v[0], a["shape"]).copy()


def _fwd_concat(v, a):
    return np.concatenate(v, axis=a["axis"])


def _fwd_slice(v, a):
    return v[0][a["key"]].copy()


def _fwd_exp(v, a):
    return np.exp(v[0])


def _fwd_log(v, a):
    return np.log(v[0])


def _fwd_sin(v, a):
    return np.sin(v[0])


def _fwd_sigmoid(v, a):
    return _sigmoid_values(v[0])


def _fwd_tanh(v, a):
    return np.tanh(v[0])


def _fwd_gelu(v, a):
    x = v[0]
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _fwd_softmax(v, a):
    return _softmax_values(v[0])


def _fwd_logsumexp(v, a):
    x = v[0]
    m = x.max(axis=-1, keepdims=True)
    return np.log(np.exp(x - m).sum(axis=-1)) + m.squeeze(-1)


def _fwd_layer_norm(v, a):
    x = v[0]
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    return d / np.sqrt(var + a["eps"])


def _fwd_sum(v, a):
    return np.asarray(v[0].sum(axis=a["axis"]))


def _fwd_mean(v, a):
    return np.asarray(v[0].mean(axis=a["axis"]))


def _fwd_std(v, a):
    return np.asarray(v[0].std(ddof=a["ddof"]))


def _fwd_amax(v, a):
    return np.asarray(v[0].max())


# --- backward rules: fn(grad, parent_values, out_value, attrs) -> [grads] ---

def _bwd_add(g, v, out, a):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)]


def _bwd_sub(g, v, out, a):
    return [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)]


def _bwd_mul(g, v, out, a):
    return [_unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)]


def _bwd_div(g, v, out, a):
    x, y = v
    return [_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)]


def _bwd_scale(g, v, out, a):
    return [g * a["factor"]]


def _bwd_shift(g, v, out, a):
    return [g]


def _bwd_matmul(g, v, out, a):
    x, y = v
    gx = g @ np.swapaxes(y, -1, -2)
    gy = np.swapaxes(x, -1, -2) @ g
    return [_unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)]


def _bwd_transpose(g, v, out, a):
    axes = a["axes"]
    if axes is None:
        return [np.swapaxes(g, -1, -2)]
    return [np.transpose(g, np.argsort(axes))]


def _bwd_reshape(g, v, out, a):
    return [g.reshape(v[0].shape)]


def _bwd_broadcast(g, v, out, a):
    return [_unbroadcast(g, v[0].shape)]


def _bwd_concat(g, v, out, a):
    axis = a["axis"]
    sizes = [x.shape[axis] for x in v]
    return list(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _bwd_slice(g, v, out, a):
    full = np.zeros_like(v[0])
    full[a["key"]] = g
    return [full]


def _bwd_exp(g, v, out, a):
    return [g * out]


def _bwd_log(g, v, out, a):
    return [g / v[0]]


def _bwd_sin(g, v, out, a):
    return [g * np.cos(v[0])]


def _bwd_sigmoid(g, v, out, a):
    return [g * out * (1.0 - out)]


def _bwd_tanh(g, v, out, a):
    return [g * (1.0 - out * out)]


def _bwd_gelu(g, v, out, a):
    x = v[0]
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return [g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)]


def _bwd_softmax(g, v, out, a):
    dot = (g * out).sum(axis=-1, keepdims=True)
    return [out * (g - dot)]


def _bwd_logsumexp(g, v, out, a):
    return [_softmax_values(v[0]) * g[..., None]]


def _bwd_layer_norm(g, v, out, a):
    x = v[0]
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a["eps"])
    xhat = d * inv
    gm = g.mean(axis=-1, keepdims=True)
    gx = (g * xhat).mean(axis=-1, keepdims=True)
    return [inv * (g - gm - xhat * gx)]


def _bwd_sum(g, v, out, a):
    x = v[0]
    axis = a["axis"]
    if axis is None:
        return [np.broadcast_to(g, x.shape).copy()]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()]


def _bwd_mean(g, v, out, a):
    x = v[0]
    axis = a["axis"]
    if axis is None:
        return [np.broadcast_to(g / x.size, x.shape).copy()]
    n = x.shape[axis]
    return [np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy()]


def _bwd_std(g, v, out, a):
    x = v[0]
    n = x.size
    denom = (n - a["ddof"]) * out
    return [g * (x - x.mean()) / denom]


def _bwd_amax(g, v, out, a):
    mask = v[0] == out
    return [g * mask / mask.sum()]


_FORWARD = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "scale": _fwd_scale,
    "shift": _fwd_shift,
    "matmul": _fwd_matmul,
    "transpose": _fwd_transpose,
    "reshape": _fwd_reshape,
    "broadcast": _fwd_broadcast,
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "exp": _fwd_exp,
    "log": _fwd_log,
    "sin": _fwd_sin,
    "sigmoid": _fwd_sigmoid,
    "tanh": _fwd_tanh,
    "gelu": _fwd_gelu,
    "softmax": _fwd_softmax,
    "logsumexp": _fwd_logsumexp,
    "layer_norm": _fwd_layer_norm,
    "sum": _fwd_sum,
    "mean": _fwd_mean,
    "std": _fwd_std,
    "amax": _fwd_amax,
}

_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "div": _bwd_div,
    "scale": _bwd_scale,
    "shift": _bwd_shift,
    "matmul": _bwd_matmul,
    "transpose": _bwd_transpose,
    "reshape": _bwd_reshape,
    "broadcast": _bwd_broadcast,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "sin": _bwd_sin,
    "sigmoid": _bwd_sigmoid,
    "tanh": _bwd_tanh,
    "gelu": _bwd_gelu,
    "softmax": _bwd_softmax,
    "logsumexp": _bwd_logsumexp,
    "layer_norm": _bwd_layer_norm,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "std": _bwd_std,
    "amax": _bwd_amax,
}


def op_kinds() -> tuple[str, ...]:
    """Names of every differentiable operation the engine supports."""
    return tuple(_FORWARD)


@dataclass
class Node:
    op: str  # "input" | "param" | "const" | an op kind
    parents: tuple[int, ...]
    attrs: dict
    value: Array
    name: str | None = None


class Var:
    """Handle to one node on a tape; supports numpy-like composition."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> Array:
        return self.tape._nodes[self.idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        node = self.tape._nodes[self.idx]
        return f"<Var #{self.idx} {node.op} shape={node.value.shape}>"

    # -- arithmetic ----------------------------------------------------

    def _binary(self, op: str, other) -> "Var":
        if isinstance(other, Var):
            return self.tape._emit(op, (self, other), {})
        if op == "add":
            return self.tape._emit("shift", (self,), {"offset": float(other)})
        if op == "mul":
            return self.tape._emit("scale", (self,), {"factor": float(other)})
        raise TypeError(f"unsupported operand for {op}: {type(other).__name__}")

    def __add__(self, other):
        return self._binary("add", other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return self.tape._emit("sub", (self, other), {})
        return self.tape._emit("shift", (self,), {"offset": -float(other)})

    def __rsub__(self, other):
        neg = self.tape._emit("scale", (self,), {"factor": -1.0})
        return neg.tape._emit("shift", (neg,), {"offset": float(other)})

    def __mul__(self, other):
        return self._binary("mul", other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self.tape._emit("div", (self, other), {})
        return self.tape._emit("scale", (self,), {"factor": 1.0 / float(other)})

    def __neg__(self):
        return self.tape._emit("scale", (self,), {"factor": -1.0})

    def __matmul__(self, other):
        if not isinstance(other, Var):
            other = self.tape.constant(other)
        return self.tape._emit("matmul", (self, other), {})

    def __getitem__(self, key) -> "Var":
        return self.tape._emit("slice", (self,), {"key": key})

    # -- shape manipulation --------------------------------------------

    def reshape(self, shape: Sequence[int]) -> "Var":
        return self.tape._emit("reshape", (self,), {"shape": tuple(shape)})

    def transpose(self, axes: Sequence[int] | None = None) -> "Var":
        axes = None if axes is None else tuple(axes)
        return self.tape._emit("transpose", (self,), {"axes": axes})

    def broadcast_to(self, shape: Sequence[int]) -> "Var":
        return self.tape._emit("broadcast", (self,), {"shape": tuple(shape)})

    # -- reductions ----------------------------------------------------

    def sum(self, axis: int | None = None) -> "Var":
        return self.tape._emit("sum", (self,), {"axis": axis})

    def mean(self, axis: int | None = None) -> "Var":
        return self.tape._emit("mean", (self,), {"axis": axis})

    def std(self, ddof: int = 1) -> "Var":
        return self.tape._emit("std", (self,), {"ddof": ddof})

    def max(self) -> "Var":
        return self.tape._emit("amax", (self,), {})


def _unary(op: str):
    def fn(x: Var) -> Var:
        return x.tape._emit(op, (x,), {})

    fn.__name__ = op
    return fn


exp = _unary("exp")
log = _unary("log")
sin = _unary("sin")
sigmoid = _unary("sigmoid")
tanh = _unary("tanh")
gelu = _unary("gelu")
softmax = _unary("softmax")
logsumexp = _unary("logsumexp")


def layer_norm(x: Var, eps: float = _LAYER_NORM_EPS) -> Var:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""
    return x.tape._emit("layer_norm", (x,), {"eps": eps})


def concat(parts: Sequence[Var], axis: int) -> Var:
    if not parts:
        raise ShapeError("concat needs at least one input")
    tape = parts[0].tape
    return tape._emit("concat", tuple(parts), {"axis": axis})


class Tape:
    """Replayable record of a computation.

    Leaves are created with :meth:`input` (data), :meth:`param` (trainable)
    and :meth:`constant`.  Operations evaluate eagerly as the graph is built,
    so ``var.value`` is always current.  :meth:`forward` rebinds named leaves
    and replays the recorded program; :meth:`backward` runs one reverse sweep
    from a scalar root, accumulating by summation where a node fans out.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._leaves: dict[str, int] = {}

    # -- construction --------------------------------------------------

    def _leaf(self, kind: str, name: str, value) -> Var:
        if name in self._leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        arr = _as_f64(value)
        self._nodes.append(Node(kind, (), {}, arr, name))
        self._leaves[name] = len(self._nodes) - 1
        return Var(self, len(self._nodes) - 1)

    def input(self, name: str, value) -> Var:
        return self._leaf("input", name, value)

    def param(self, name: str, value) -> Var:
        return self._leaf("param", name, value)

    def constant(self, value) -> Var:
        self._nodes.append(Node("const", (), {}, _as_f64(value)))
        return Var(self, len(self._nodes) - 1)

    def _emit(self, op: str, parents: tuple[Var, ...], attrs: dict) -> Var:
        for p in parents:
            if p.tape is not self:
                raise ShapeError("cannot combine variables from different tapes")
        idx = len(self._nodes)
        vals = [p.value for p in parents]
        value = self._execute(op, vals, attrs, idx)
        self._nodes.append(Node(op, tuple(p.idx for p in parents), attrs, value))
        return Var(self, idx)

    def _execute(self, op: str, vals: list[Array], attrs: dict, idx: int) -> Array:
        try:
            value = _as_f64(_FORWARD[op](vals, attrs))
        except ShapeError:
            raise
        except ValueError as exc:
            raise ShapeError(f"op '{op}' (node {idx}): {exc}") from exc
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite values from op '{op}' (node {idx})")
        return value

    # -- execution -----------------------------------------------------

    def forward(self, bindings: Mapping[str, Array] | None = None,
                root: Var | None = None) -> Array:
        """Replay the tape, optionally rebinding named leaves first."""
        if bindings:
            for name, value in bindings.items():
                if name not in self._leaves:
                    raise KeyError(f"unknown leaf {name!r}")
                node = self._nodes[self._leaves[name]]
                arr = _as_f64(value)
                if arr.shape != node.value.shape:
                    raise ShapeError(
                        f"leaf {name!r} bound with shape {arr.shape}, "
                        f"expected {node.value.shape}")
                node.value = arr
        for idx, node in enumerate(self._nodes):
            if node.op in ("input", "param", "const"):
                continue
            vals = [self._nodes[p].value for p in node.parents]
            node.value = self._execute(node.op, vals, node.attrs, idx)
        target = self._nodes[-1] if root is None else self._nodes[root.idx]
        return target.value

    def backward(self, root: Var) -> dict[str, Array]:
        """Gradient of a scalar root with respect to every param leaf."""
        root_value = self._nodes[root.idx].value
        if root_value.size != 1:
            raise ShapeError(
                f"backward requires a scalar root, got shape {root_value.shape}")
        grads: list[Array | None] = [None] * len(self._nodes)
        grads[root.idx] = np.ones_like(root_value)
        for idx in range(root.idx, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self._nodes[idx]
            if node.op in ("input", "param", "const"):
                continue
            vals = [self._nodes[p].value for p in node.parents]
            pgrads = _BACKWARD[node.op](g, vals, node.value, node.attrs)
            for pidx, pg in zip(node.parents, pgrads):
                if pg is None:
                    continue
                if grads[pidx] is None:
                    grads[pidx] = pg.copy()
                else:
                    grads[pidx] = grads[pidx] + pg
        out: dict[str, Array] = {}
        for name, idx in self._leaves.items():
            if self._nodes[idx].op != "param":
                continue
            g = grads[idx]
            out[name] = np.zeros_like(self._nodes[idx].value) if g is None else g
        return out

    def finite_diff_check(self, root: Var, eps: float = 1e-5) -> float:
        """Worst relative error between reverse-mode and central-difference
        gradients over every coordinate of every param leaf."""
        if not 1e-7 <= eps <= 1e-3:
            raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
        analytic = self.backward(root)
        worst = 0.0
        for name, idx in self._leaves.items():
            if self._nodes[idx].op != "param":
                continue
            base = self._nodes[idx].value.copy()
            g_ad = analytic[name].ravel()
            for j in range(base.size):
                bumped = base.copy()
                bumped.flat[j] = base.flat[j] + eps
                f_plus = float(self.forward({name: bumped}, root=root))
                bumped.flat[j] = base.flat[j] - eps
                f_minus = float(self.forward({name: bumped}, root=root))
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                denom = max(1.0, abs(g_ad[j]), abs(g_fd))
                worst = max(worst, abs(g_ad[j] - g_fd) / denom)
            self.forward({name: base})
        return worst

    def __len__(self) -> int:
        return len(self._nodes)


class ParamStore:
    """Named trainable arrays with a stable, deterministic iteration order."""

    def __init__(self):
        self._data: dict[str, Array] = {}

    def add(self, name: str, value) -> Array:
        if name in self._data:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = _as_f64(value).copy()
        self._data[name] = arr
        return arr

    def __getitem__(self, name: str) -> Array:
        return self._data[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._data:
            raise KeyError(f"unknown parameter {name!r}")
        arr = _as_f64(value)
        if arr.shape != self._data[name].shape:
            raise ShapeError(f"parameter {name!r} shape changed")
        self._data[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> tuple[str, ...]:
        return tuple(self._data)

    def items(self):
        return self._data.items()

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, arr in self._data.items():
            dup.add(name, arr)
        return dup

    def bind(self, tape: Tape) -> dict[str, Var]:
        """Register every entry as a trainable leaf on a tape."""
        return {name: tape.param(name, arr) for name, arr in self._data.items()}

    # -- serialization (byte-stable on a fixed platform) ----------------

    def to_json(self) -> str:
        payload = [
            {"name": n, "shape": list(a.shape), "values": [float(x) for x in a.ravel()]}
            for n, a in self._data.items()
        ]
        return json.dumps({"format": "hopfolio-params-v1", "params": payload},
                          separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ParamStore":
        doc = json.loads(text)
        store = cls()
        for entry in doc["params"]:
            arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            store.add(entry["name"], arr)
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        return cls.from_json(Path(path).read_text())
