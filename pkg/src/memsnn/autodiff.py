"""Minimal define-by-run reverse-mode differentiation over numpy arrays.

Every op builds a :class:`Value` that remembers its parents and a closure
mapping the upstream gradient to parent gradients. ``backward`` walks the
graph once in reverse topological order. The spike nonlinearity swaps the
zero-almost-everywhere derivative of the step function for the fast-sigmoid
surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "SurrogateSpec",
    "Value",
    "as_value",
    "record",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "concat",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "clamp_log",
    "log_softmax",
    "masked_logsumexp",
    "l2_normalize",
    "conv2d",
    "avg_pool2d",
    "spike_threshold",
    "surrogate_factor",
    "straight_through",
    "detach",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when an op receives operands whose shapes do not fit."""

    def __init__(self, op_tag: str, *shapes):
        self.op_tag = op_tag
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op_tag}: incompatible shapes {joined}")


@dataclass(frozen=True)
class SurrogateSpec:
    """Slope and threshold of the fast-sigmoid surrogate."""

    slope: float = 0.9
    threshold: float = 1.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"surrogate slope must be positive, got {self.slope}")


class Value:
    """A node in the computation graph.

    ``grad`` is allocated eagerly with the same shape as ``data`` and only
    ever accumulated into.
    """

    __slots__ = ("data", "grad", "op", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Value"] = (), op: str = "leaf",
                 backward_fn: Callable | None = None, requires_grad: bool | None = None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents) if self.parents else True
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Value(op={self.op!r}, shape={self.data.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_value(x) -> Value:
    """Wrap constants; constants never receive gradient."""
    if isinstance(x, Value):
        return x
    return Value(x, requires_grad=False, op="const")


def record(op_tag: str, inputs: Sequence, forward_fn: Callable, vjp: Callable) -> Value:
    """Generic op constructor.

    ``forward_fn(*arrays)`` produces the output array. ``vjp(upstream, out, *arrays)``
    returns one gradient (or ``None``) per input.
    """
    vals = [as_value(v) for v in inputs]
    arrays = [v.data for v in vals]
    try:
        out_data = forward_fn(*arrays)
    except ValueError as exc:
        if isinstance(exc, ShapeError):
            raise
        raise ShapeError(op_tag, *(a.shape for a in arrays)) from exc
    out = Value(out_data, parents=vals, op=op_tag)
    out_arr = out.data

    # closing over the array rather than ``out`` keeps graphs free of reference cycles
    def _bw(g):
        return vjp(g, out_arr, *arrays)

    out._backward = _bw
    return out


def _toposort(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into every reachable node's ``grad``."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    order = _toposort(root)
    root.grad = root.grad + np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or not node.parents:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.data.shape:
                g = _unbroadcast(g, parent.data.shape)
            parent.grad = parent.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op_tag, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op_tag, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check("add", a, b)
    return record("add", (a, b), np.add, lambda g, out, x, y: (g, g))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check("sub", a, b)
    return record("sub", (a, b), np.subtract, lambda g, out, x, y: (g, -g))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check("mul", a, b)
    return record("mul", (a, b), np.multiply, lambda g, out, x, y: (g * y, g * x))


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check("div", a, b)
    return record("div", (a, b), np.divide,
                  lambda g, out, x, y: (g / y, -g * x / (y * y)))


def neg(a) -> Value:
    return record("neg", (a,), np.negative, lambda g, out, x: (-g,))


def tanh(a) -> Value:
    return record("tanh", (a,), np.tanh, lambda g, out, x: (g * (1.0 - out * out),))


def _sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Value:
    return record("sigmoid", (a,), _sigmoid, lambda g, out, x: (g * out * (1.0 - out),))


def exp(a) -> Value:
    return record("exp", (a,), np.exp, lambda g, out, x: (g * out,))


def log(a) -> Value:
    return record("log", (a,), np.log, lambda g, out, x: (g / x,))


def clamp_log(a, eps: float = 1e-8) -> Value:
    """``log(max(a, eps))``; inside the clamp the derivative is zero."""

    def vjp(g, out, x):
        return (np.where(x > eps, g / np.maximum(x, eps), 0.0),)

    return record("clamp_log", (a,), lambda x: np.log(np.maximum(x, eps)), vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def vjp(g, out, x, y):
        if x.ndim == 1 and y.ndim == 1:
            return g * y, g * x
        if y.ndim == 1:
            return np.multiply.outer(g, y), np.tensordot(x, g, axes=(tuple(range(x.ndim - 1)), tuple(range(g.ndim))))
        if x.ndim == 1:
            return g @ y.T, np.outer(x, g)
        gx = g @ np.swapaxes(y, -1, -2)
        gy = np.swapaxes(x, -1, -2) @ g
        return gx, gy

    return record("matmul", (a, b), np.matmul, vjp)


def transpose(a) -> Value:
    return record("transpose", (a,), lambda x: np.swapaxes(x, -1, -2),
                  lambda g, out, x: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Value:
    a = as_value(a)
    shape = tuple(shape)
    try:
        np.broadcast_to(0, a.shape).reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return record("reshape", (a,), lambda x: x.reshape(shape),
                  lambda g, out, x: (g.reshape(x.shape),))


def sum(a, axis=None, keepdims=False) -> Value:  # noqa: A001
    def vjp(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp)


def mean(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g, out, x):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return record("mean", (a,), lambda x: np.mean(x, axis=axis, keepdims=keepdims), vjp)


def concat(values: Sequence, axis: int = -1) -> Value:
    vals = [as_value(v) for v in values]
    ref = list(vals[0].shape)
    for v in vals[1:]:
        other = list(v.shape)
        if len(other) != len(ref):
            raise ShapeError("concat", vals[0].shape, v.shape)
        ax = axis % len(ref)
        if other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError("concat", vals[0].shape, v.shape)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g, out, *xs):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", vals, lambda *xs: np.concatenate(xs, axis=axis), vjp)


# ---------------------------------------------------------------- reductions used by losses


def log_softmax(a, axis: int = -1) -> Value:
    def fwd(x):
        m = x.max(axis=axis, keepdims=True)
        return x - m - np.log(np.exp(x - m).sum(axis=axis, keepdims=True))

    def vjp(g, out, x):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (a,), fwd, vjp)


def masked_logsumexp(a, mask: np.ndarray, axis: int = -1) -> Value:
    """logsumexp restricted to entries where ``mask`` is true.

    Rows with an empty mask yield ``-inf``-free zeros and receive no gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    a = as_value(a)
    if mask.shape != a.shape:
        raise ShapeError("masked_logsumexp", a.shape, mask.shape)

    def fwd(x):
        xm = np.where(mask, x, -np.inf)
        m = xm.max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.where(mask, np.exp(xm - m), 0.0).sum(axis=axis, keepdims=True)
        empty = s == 0
        lse = np.where(empty, 0.0, m + np.log(np.where(empty, 1.0, s)))
        return np.squeeze(lse, axis=axis)

    def vjp(g, out, x):
        lse = np.expand_dims(out, axis)
        w = np.where(mask, np.exp(np.where(mask, x, 0.0) - lse), 0.0)
        return (np.expand_dims(g, axis) * w,)

    return record("masked_logsumexp", (a,), fwd, vjp)


def l2_normalize(a, eps: float = 1e-12) -> Value:
    """Row-wise ``h / ||h||``; rows with norm below ``eps`` map to zero."""

    def fwd(x):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        return np.where(n < eps, 0.0, x / np.where(n < eps, 1.0, n))

    def vjp(g, out, x):
        n = np.linalg.norm(x, axis=-1, keepdims=True)
        safe = np.where(n < eps, 1.0, n)
        gx = (g - out * (out * g).sum(axis=-1, keepdims=True)) / safe
        return (np.where(n < eps, 0.0, gx),)

    return record("l2_normalize", (a,), fwd, vjp)


# ---------------------------------------------------------------- convolution


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, w, b=None, padding: int = 1) -> Value:
    """Stride-1 2-D cross-correlation, NCHW input and OIHW weights."""
    x, w = as_value(x), as_value(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    kh, kw = w.shape[2:]
    inputs = (x, w) if b is None else (x, w, as_value(b))
    if b is not None and inputs[2].shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, inputs[2].shape)
    cache = {}

    def fwd(xd, wd, bd=None):
        xp = _pad(xd, padding)
        cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        # cols: N, C, H, W, kh, kw
        out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3]))  # N, H, W, O
        cache["cols"] = cols
        out = out.transpose(0, 3, 1, 2)
        if bd is not None:
            out = out + bd[None, :, None, None]
        return np.ascontiguousarray(out)

    def vjp(g, out, xd, wd, bd=None):
        cols = cache["cols"]
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kh, kw
        gx = None
        if x.requires_grad:
            H, W = g.shape[2], g.shape[3]
            gxp = np.zeros(_pad(xd, padding).shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + H, j:j + W] += np.einsum("nohw,oc->nchw", g, wd[:, :, i, j], optimize=True)
            gx = gxp[:, :, padding:padding + xd.shape[2], padding:padding + xd.shape[3]] if padding else gxp
        if bd is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record("conv2d", inputs, fwd, vjp)


def avg_pool2d(x, k: int = 2) -> Value:
    """Non-overlapping k x k mean pool; trailing rows/cols that do not fill a window are dropped."""
    x = as_value(x)
    if x.ndim != 4:
        raise ShapeError("avg_pool2d", x.shape, (k, k))

    def fwd(xd):
        n, c, h, w = xd.shape
        ho, wo = h // k, w // k
        return xd[:, :, :ho * k, :wo * k].reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def vjp(g, out, xd):
        gx = np.zeros_like(xd)
        ho, wo = g.shape[2], g.shape[3]
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        gx[:, :, :ho * k, :wo * k] = up
        return (gx,)

    return record("avg_pool2d", (x,), fwd, vjp)


# ---------------------------------------------------------------- spiking


def surrogate_factor(u: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    """Fast-sigmoid stand-in for dS/dU."""
    return 1.0 / (1.0 + np.abs(spec.slope * (u - spec.threshold))) ** 2


def spike_threshold(u, spec: SurrogateSpec = SurrogateSpec()) -> Value:
    """Heaviside forward (fires at exactly the threshold), surrogate backward."""

    def fwd(x):
        return (x >= spec.threshold).astype(np.float64)

    def vjp(g, out, x):
        return (g * surrogate_factor(x, spec),)

    return record("spike_threshold", (u,), fwd, vjp)


def straight_through(x, replacement: np.ndarray, tag: str = "straight_through") -> Value:
    """Forward emits ``replacement``; gradient flows to ``x`` untouched."""
    replacement = np.asarray(replacement, dtype=np.float64)
    x = as_value(x)
    if replacement.shape != x.shape:
        raise ShapeError(tag, x.shape, replacement.shape)
    return record(tag, (x,), lambda xd: replacement.copy(), lambda g, out, xd: (g,))


def detach(x) -> Value:
    return as_value(np.array(as_value(x).data, copy=True))


# ---------------------------------------------------------------- checking


def finite_diff_check(f: Callable[[Value], Value], x, eps: float = 1e-5,
                      eps_abs: float = 1e-6) -> float:
    """Max relative gap between backprop and central differences.

    ``f`` maps a Value to a scalar Value. The relative error per coordinate is
    ``|analytic - numeric| / (|analytic| + eps_abs)``.
    """
    x = np.array(x, dtype=np.float64)
    leaf = Value(x.copy())
    out = f(leaf)
    backward(out)
    analytic = leaf.grad.copy()
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Value(x.copy(), requires_grad=False)).item()
        flat[i] = orig - eps
        lo = f(Value(x.copy(), requires_grad=False)).item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2 * eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + eps_abs)
    return float(err.max()) if err.size else 0.0
