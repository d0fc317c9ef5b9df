"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the model needs are provided. Every op checks its
output for NaN/Inf and raises :class:`NumericError`. Broadcasting follows
numpy; gradients are summed back to the operand shapes.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
# when a list, relu appends a fingerprint of its active set
_KINKS: list | None = None


class NumericError(FloatingPointError):
    """Non-finite value produced or invalid numeric input."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def _record_kinks():
    global _KINKS
    prev = _KINKS
    _KINKS = []
    try:
        yield _KINKS
    finally:
        _KINKS = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, op: str) -> np.ndarray:
    # a sum is non-finite whenever any entry is (or the entries overflow)
    if not math.isfinite(out.sum()):
        raise NumericError(f"non-finite value produced by {op}")
    return out


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(_check(data, op))
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


elementwise_mul = mul


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = sigmoid_np(x.data)

    def bw(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, (x,), bw, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - y * y))

    return _make(y, (x,), bw, "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _KINKS is not None:
        _KINKS.append(hash(mask.tobytes()))

    def bw(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), bw, "relu")


def cos(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accum(x, -g * np.sin(x.data))

    return _make(np.cos(x.data), (x,), bw, "cos")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)

    def bw(g):
        _accum(x, g * y)

    return _make(y, (x,), bw, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive input")

    def bw(g):
        _accum(x, g / x.data)

    return _make(np.log(x.data), (x,), bw, "log")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)

    def bw(g):
        _accum(x, g * sigmoid_np(x.data))

    return _make(np.logaddexp(0.0, x.data), (x,), bw, "softplus")


# ---------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def l2_norm_sq(*xs) -> Tensor:
    """Sum of squared entries over one or more tensors, as a single node."""
    xs = tuple(as_tensor(x) for x in xs)

    def bw(g):
        for x in xs:
            _accum(x, 2.0 * g * x.data)

    return _make(np.asarray(math.fsum(float(np.vdot(x.data, x.data)) for x in xs)), xs, bw, "l2_norm_sq")


# ---------------------------------------------------------------- linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim > 2:
        raise ValueError("right operand of matmul must be 1-d or 2-d")

    def bw(g):
        A, B = a.data, b.data
        if b.ndim == 1:
            if a.requires_grad:
                _accum(a, np.multiply.outer(g, B))
            if b.requires_grad:
                _accum(b, np.tensordot(A, g, axes=(tuple(range(A.ndim - 1)), tuple(range(g.ndim)))))
            return
        if a.requires_grad:
            _accum(a, g @ B.T)
        if b.requires_grad:
            if A.ndim == 1:
                _accum(b, np.multiply.outer(A, g))
            else:
                A2 = A.reshape(-1, A.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                _accum(b, A2.T @ g2)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def spmm(m, x) -> Tensor:
    """Constant (possibly scipy-sparse) matrix times a tensor."""
    x = as_tensor(x)

    def bw(g):
        _accum(x, np.asarray(m.T @ g))

    return _make(np.asarray(m @ x.data), (x,), bw, "spmm")


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].ndim
    sizes = [x.shape[ax] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(x, g[tuple(sl)])

    return _make(np.concatenate([x.data for x in xs], axis=ax), xs, bw, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accum(x, g.T)

    return _make(x.data.T, (x,), bw, "transpose")


def take(x, idx) -> Tensor:
    """Gather rows (axis 0) with an integer index array of any shape; repeats allowed."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return _make(x.data[idx], (x,), bw, "take")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return _make(x.data[idx], (x,), bw, "getitem")


def segment_mean(x, seg: np.ndarray, n: int) -> Tensor:
    """Mean of rows of ``x`` grouped by segment id ``seg`` into ``n`` output rows.

    Empty segments yield zero rows.
    """
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.bincount(seg, minlength=n).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    out *= inv.reshape((n,) + (1,) * (x.ndim - 1))

    def bw(g):
        _accum(x, g[seg] * inv[seg].reshape((-1,) + (1,) * (x.ndim - 1)))

    return _make(out, (x,), bw, "segment_mean")


# ---------------------------------------------------------------- softmax family


def _masked_logits(x: np.ndarray, mask) -> np.ndarray:
    return x if mask is None else np.where(mask, x, -np.inf)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax. Masked entries get probability 0; all-masked rows are all zero."""
    x = as_tensor(x)
    z = _masked_logits(x.data, mask)
    mx = np.max(z, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(z - mx)
    s = e.sum(axis=axis, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        _accum(x, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(y, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    mx = np.max(x.data, axis=axis, keepdims=True)
    sh = x.data - mx
    lse = np.log(np.exp(sh).sum(axis=axis, keepdims=True))
    y = sh - lse
    p = np.exp(y)

    def bw(g):
        _accum(x, g - p * np.sum(g, axis=axis, keepdims=True))

    return _make(y, (x,), bw, "log_softmax")


# ---------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Interior gradients are released and the graph is consumed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        node.grad = None
        node._backward = None
        node._parents = ()


# ---------------------------------------------------------------- verification


def gradient_check(
    f: Callable[[], Tensor],
    params: "Iterable[tuple[str, Tensor]]",
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
    report: dict | None = None,
) -> tuple[float, dict[str, float]]:
    """Compare autodiff gradients with central differences.

    ``f`` must recompute the scalar loss from the current parameter values.
    Returns the maximum relative error over all checked coordinates and the
    per-parameter maxima. The relative error of a coordinate is
    ``|a - b| / max(|a|, |b|, floor)``.

    If ``report`` is a dict it receives ``worst`` as (name, index, analytic,
    numeric) and ``kinks``, the coordinates where a ReLU switched on or off
    between the base point and one of the perturbed points. Central
    differences do not estimate the derivative at such coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    for _, p in params:
        p.grad = None
    with _record_kinks() as base_sig:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss")
    backward(loss)
    worst: dict[str, float] = {}
    kinks: list[tuple[str, int]] = []
    top = (None, -1, 0.0, 0.0, -1.0)
    for name, p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        err = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad(), _record_kinks() as sig_p:
                fp = f().item()
            flat[i] = orig - h
            with no_grad(), _record_kinks() as sig_m:
                fm = f().item()
            flat[i] = orig
            if sig_p != base_sig or sig_m != base_sig:
                kinks.append((name, int(i)))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            num = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            if rel > top[4]:
                top = (name, int(i), float(a), float(num), rel)
            err = max(err, rel)
        worst[name] = err
    for _, p in params:
        p.grad = None
    if report is not None:
        report["worst"] = top[:4]
        report["kinks"] = kinks
    return (max(worst.values()) if worst else 0.0), worst
