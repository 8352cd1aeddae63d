"""Minimal define-by-run reverse-mode differentiation over float64 numpy buffers.

Every kernel returns a :class:`Tensor` holding its value and, when any input
tracks gradients, the list of ``(parent, vjp)`` pairs needed by
:func:`backward`.  A fresh tape is built for every forward pass.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), op="leaf", requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents: tuple[tuple[Tensor, Callable[[np.ndarray], np.ndarray]], ...] = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or bool(self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def detach(self) -> Tensor:
        return Tensor(self.value.copy())

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value, op, pairs):
    pairs = tuple((p, fn) for p, fn in pairs if p.requires_grad)
    return Tensor(value, pairs, op=op)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kernel, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kernel}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    return _node(a.value + b.value, "add", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("subtract", a, b)
    return _node(a.value - b.value, "subtract", [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("multiply", a, b)
    return _node(a.value * b.value, "multiply", [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("divide", a, b)
    out = a.value / b.value
    return _node(out, "divide", [
        (a, lambda g: _unbroadcast(g / b.value, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / b.value, b.shape)),
    ])


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.value * c, "scale", [(a, lambda g: g * c)])


def square(a: Tensor) -> Tensor:
    return _node(a.value**2, "square", [(a, lambda g: 2.0 * g * a.value)])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _node(out, "exp", [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise FloatingPointError("log: non-positive input")
    return _node(np.log(a.value), "log", [(a, lambda g: g / a.value)])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, "tanh", [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.value)
    return _node(out, "sigmoid", [(a, lambda g: g * out * (1.0 - out))])


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.value
    out = -np.logaddexp(0.0, -x)
    return _node(out, "log_sigmoid", [(a, lambda g: g * _sigmoid(-x))])


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero wherever the clip is active."""
    active = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), "clamp", [(a, lambda g: g * active)])


def abs_(a: Tensor) -> Tensor:
    return _node(np.abs(a.value), "abs", [(a, lambda g: g * np.sign(a.value))])


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(a.value @ b.value, "matmul", [
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ])


def sparse_matmul(adj: sp.spmatrix, x: Tensor) -> Tensor:
    """``adj @ x`` for a constant sparse matrix."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: cannot multiply {adj.shape} by {x.shape}")
    adj_t = adj.T.tocsr()
    return _node(np.asarray(adj @ x.value), "sparse_matmul", [(x, lambda g: np.asarray(adj_t @ g))])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    pairs = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(lo, hi)
        pairs.append((t, lambda g, sl=tuple(sl): g[sl]))
    return _node(out, "concat", pairs)


def gather_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return out

    return _node(a.value[index], "gather_rows", [(a, vjp)])


def take_last(a: Tensor, index) -> Tensor:
    """``take_along_axis(a, index, axis=-1)``."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != a.value.ndim:
        raise ShapeError(f"take_last: index rank {index.ndim} vs input {a.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        lead = np.indices(index.shape)[:-1]
        np.add.at(out, (*lead, index), g)
        return out

    return _node(np.take_along_axis(a.value, index, axis=-1), "take_last", [(a, vjp)])


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _node(out, "reshape", [(a, lambda g: g.reshape(a.shape))])


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.value, axis).shape)


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _node(out, "sum", [(a, vjp)])


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner product over the last axis."""
    if a.shape != b.shape:
        raise ShapeError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    return sum_(mul(a, b), axis=-1)


def logsumexp(a: Tensor, axis=-1) -> Tensor:
    m = np.max(a.value, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a.value - m)
    tot = s.sum(axis=axis, keepdims=True)
    out = (np.log(tot) + m).squeeze(axis)
    w = s / tot
    return _node(out, "logsumexp", [(a, lambda g: np.expand_dims(g, axis) * w)])


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return p * (g - (g * p).sum(axis=axis, keepdims=True))

    return _node(p, "softmax", [(a, vjp)])


def l2_normalize_rows(a: Tensor, eps: float = 0.0) -> Tensor:
    """Unit-normalize along the last axis; all-zero rows stay zero with zero gradient."""
    norm = np.sqrt((a.value**2).sum(axis=-1, keepdims=True))
    live = norm > eps
    safe = np.where(live, norm, 1.0)
    y = np.where(live, a.value / safe, 0.0)

    def vjp(g):
        # d(x/|x|) = (g - y (y.g)) / |x|
        return np.where(live, (g - y * (y * g).sum(axis=-1, keepdims=True)) / safe, 0.0)

    return _node(y, "l2_normalize", [(a, vjp)])


def gaussian_log_density(x, mu: Tensor, log_sigma: Tensor) -> Tensor:
    """log N(x; mu, exp(log_sigma)^2) elementwise; ``x`` is a constant sample."""
    x = np.asarray(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.shape != mu.shape or mu.shape != log_sigma.shape:
        raise ShapeError(f"gaussian_log_density: shapes {x.shape}, {mu.shape}, {log_sigma.shape}")
    inv_var = np.exp(-2.0 * log_sigma.value)
    z2 = (x - mu.value) ** 2 * inv_var
    out = -0.5 * z2 - log_sigma.value - 0.5 * _LOG_2PI
    return _node(out, "gaussian_log_density", [
        (mu, lambda g: g * (x - mu.value) * inv_var),
        (log_sigma, lambda g: g * (z2 - 1.0)),
    ])


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = constant(a), constant(b)
    _broadcast_shape("minimum", a, b)
    pick_a = a.value <= b.value
    return _node(np.where(pick_a, a.value, b.value), "minimum", [
        (a, lambda g: _unbroadcast(g * pick_a, a.shape)),
        (b, lambda g: _unbroadcast(g * ~pick_a, b.shape)),
    ])


# ---------------------------------------------------------------- backward

def _topo_dfs(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order[::-1]


def _topo_kahn(root):
    nodes, stack, seen = [], [root], {id(root)}
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent, _ in node.parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    indeg = {id(n): 0 for n in nodes}
    for n in nodes:
        for parent, _ in n.parents:
            indeg[id(parent)] += 1
    ready = [n for n in nodes if indeg[id(n)] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for parent, _ in n.parents:
            indeg[id(parent)] -= 1
            if indeg[id(parent)] == 0:
                ready.append(parent)
    return order


def backward(root: Tensor, order: str = "dfs") -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every tracked ancestor.

    Gradients of leaves are accumulated (``+=``) so that several roots can be
    summed; call :meth:`Tensor.zero_grad` between steps.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    nodes = _topo_kahn(root) if order == "kahn" else _topo_dfs(root)
    upstream = {id(root): np.ones_like(root.value)}
    for node in nodes:
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = upstream.get(id(parent))
            upstream[id(parent)] = contrib if prev is None else prev + contrib


def gradients(root: Tensor, params: dict[str, Tensor], order: str = "dfs") -> dict[str, np.ndarray]:
    """Fresh gradients of ``root`` for ``params``; unreached parameters get zeros."""
    for p in params.values():
        p.grad = None
    backward(root, order=order)
    return {k: (np.zeros_like(p.value) if p.grad is None else p.grad) for k, p in params.items()}


# ---------------------------------------------------------------- optimizer

class Adam:
    """Bias-corrected Adam over a named set of parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None):
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        for k, g in grads.items():
            if g is not None and not np.all(np.isfinite(g)):
                raise DivergenceError(f"divergence detected: non-finite gradient for {k!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.value)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.value -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------- checkpoints

def save_parameters(path, params: dict[str, np.ndarray]) -> None:
    """Write ``name,shape,values...`` rows; shape is ``x``-joined, values at 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            shape = "x".join(str(n) for n in arr.shape) or "scalar"
            vals = ",".join(f"{v:.17g}" for v in arr.ravel())
            fh.write(f"{name},{shape},{vals}\n" if vals else f"{name},{shape}\n")


def load_parameters(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            name, shape, *vals = line.split(",")
            dims = () if shape == "scalar" else tuple(int(n) for n in shape.split("x"))
            out[name] = np.array([float(v) for v in vals], dtype=np.float64).reshape(dims)
    return out
