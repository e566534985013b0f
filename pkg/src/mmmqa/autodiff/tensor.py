"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray. Operations on tensors that require
gradients record a graph node (parents plus a closure mapping the upstream
gradient to parent gradients); :meth:`Tensor.backward` walks that graph once
in reverse topological order.

Only the primitives needed by the encoder and the classifiers are provided.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError, UsageError

_DTYPES = {"f64": np.float64, "f32": np.float32}
_state = {"dtype": np.float64, "grad_enabled": True}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(precision: str) -> None:
    """Select ``"f64"`` (default) or ``"f32"`` for newly created tensors."""
    try:
        _state["dtype"] = _DTYPES[precision]
    except KeyError:
        raise UsageError(f"unknown precision {precision!r}; expected one of {sorted(_DTYPES)}") from None


@contextlib.contextmanager
def precision(name: str):
    old = _state["dtype"]
    set_default_dtype(name)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


class Tensor:
    """Array plus the bookkeeping for reverse-mode differentiation.

    Leaves created with ``requires_grad=True`` receive ``.grad`` after a
    backward pass. Interior nodes keep a reference to their parents and a
    backward closure until the graph is consumed.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _state["dtype"])
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op: Optional[str] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable leaf that requires it.

        The root must hold a single element. A graph can be differentiated
        once; calling ``backward`` again on the same root raises
        :class:`UsageError`, since the intermediate closures are released.
        Leaf gradients accumulate across *different* graphs until
        :meth:`zero_grad` is called.
        """
        if self.data.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise UsageError("backward was already run on this graph; rebuild it first")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
        self._consumed = True


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an operation.

    ``backward(g)`` must return one gradient (or None) per parent. No graph
    node is recorded when gradients are disabled or no parent needs one.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._consumed = False
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return make_op(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_op(np.log(x), (a,), lambda g: (g / x,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    m = a.data > 0
    return make_op(a.data * m, (a,), lambda g: (g * m,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_op(y, (a,), backward, "gelu")


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules; 1-D operands are promoted."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs at least 1-D operands")
    if a.ndim == 1 and b.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), reshape(b, (b.shape[0], 1))), ())
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    # contiguous operands keep results independent of row position in the batch
    ad = np.ascontiguousarray(a.data)
    bd = np.ascontiguousarray(b.data)
    out = np.matmul(ad, bd)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.ascontiguousarray(np.swapaxes(bd, -1, -2))), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.ascontiguousarray(np.swapaxes(ad, -1, -2)), g), bd.shape)
        return ga, gb

    return make_op(out, (a, b), backward, "matmul")


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def getitem(a, index) -> Tensor:
    """Indexing/slicing; gradients scatter back with accumulation."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_op(a.data[index], (a,), backward, "getitem")


def column(a, j: int) -> Tensor:
    """Column ``j`` of a 2-D tensor as a 1-D tensor."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"column() needs a matrix, got shape {a.shape}")
    return getitem(a, (slice(None), j))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("concat of an empty list")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def embedding(table, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array ``ids`` of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    shape, dtype = table.shape, table.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return make_op(table.data[ids], (table,), backward, "embedding")


# ---------------------------------------------------------------- normalisers

def _check_finite(x: np.ndarray, name: str) -> None:
    if np.isnan(x).any():
        raise NumericError(f"{name} received NaN input")


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get exactly zero weight."""
    a = as_tensor(a)
    x = a.data
    _check_finite(x, "softmax")
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_op(y, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    a = as_tensor(a)
    x = a.data
    _check_finite(x, "log_softmax")
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - np.max(x, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        g = np.where(np.isfinite(y), g, 0.0)
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return make_op(y, (a,), backward, "log_softmax")


def standardize(a, eps: float = 1e-12) -> Tensor:
    """Zero-mean, unit-variance along the last axis (layer norm before the affine map)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return make_op(xhat, (a,), backward, "standardize")


def layer_norm(a, gamma, beta, eps: float = 1e-12) -> Tensor:
    return add(mul(standardize(a, eps), gamma), beta)


def dropout(a, rate: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``train`` is False or ``rate`` is 0."""
    a = as_tensor(a)
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise UsageError("dropout in train mode needs a random generator")
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return make_op(a.data * keep, (a,), lambda g: (g * keep,), "dropout")
