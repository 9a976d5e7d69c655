"""Tape-based reverse-mode automatic differentiation on numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` walks that record in reverse and
accumulates adjoints into every input that requires a gradient.

Outside a tape nothing is recorded, which is how inference runs.
"""

import numpy as np

from ..errors import DomainError, ShapeError

DEFAULT_DTYPE = np.float64

_active_tapes = []


def _recording():
    return bool(_active_tapes)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on a scalar result::

        with Tape() as tape:
            loss = (w * x).sum()
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward):
        self.nodes.append((out, inputs, backward))

    def backward(self, root, seed=None):
        """Propagate adjoints from ``root`` back through every recorded op.

        ``seed`` defaults to ones, which requires ``root`` to be a scalar.
        Gradients of intermediate (non-leaf) tensors are released as soon as
        they have been consumed unless :meth:`Tensor.retain_grad` was called.
        """
        if seed is None:
            if root.data.size != 1:
                raise ShapeError(f"backward needs a scalar root or an explicit seed, got shape {root.shape}")
            seed = np.ones_like(root.data)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.shape:
                raise ShapeError(f"seed shape {seed.shape} does not match root shape {root.shape}")
        root._accumulate(seed)
        for out, inputs, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gi in zip(inputs, grads):
                if gi is not None and t.requires_grad:
                    t._accumulate(gi)
            if not out._retain:
                out.grad = None
        self.nodes.clear()


class Tensor:
    """n-dimensional value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_leaf", "_retain", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._leaf = True
        self._retain = False
        self.name = name

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def retain_grad(self):
        self._retain = True
        return self

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # operator sugar -------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x, dtype=None):
    """Wrap ``x``; arrays are cast to ``dtype`` when given (tensors pass through)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, inputs, backward):
    """Wrap an op result and record it on the active tape when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._leaf = False
    out._retain = False
    out.name = None
    req = _recording() and any(t.requires_grad for t in inputs)
    out.requires_grad = req
    if req:
        _active_tapes[-1].record(out, inputs, backward)
    return out


def column_sum(a):
    """Sum over every axis but the last, as a BLAS product (much faster than
    ``a.sum(axis=...)`` when the last axis is narrow)."""
    c = a.shape[-1]
    a2 = a.reshape(-1, c)
    return np.ones(a2.shape[0], dtype=a.dtype) @ a2


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) and g.ndim > len(shape) and g.shape[g.ndim - len(shape):] == tuple(shape):
        size = int(np.prod(shape))
        return (np.ones(g.size // size, dtype=g.dtype) @ g.reshape(-1, size)).reshape(shape)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what}: non-finite input")


def _broadcast_shapes(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")

    def backward(g):
        return g, g

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")

    def backward(g):
        return g, -g

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "multiply")
    ad, bd = a.data, b.data

    def backward(g):
        return (g * bd if a.requires_grad else None,
                g * ad if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "divide")
    if np.any(b.data == 0):
        raise DomainError("divide: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (g / bd if a.requires_grad else None,
                -g * out / bd if b.requires_grad else None)

    return _make(out, (a, b), backward)


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if b.ndim == 2 and g.ndim > 2:
                # (..., m, k)^T (..., m, n) summed over the leading axes
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward)


# shape manipulation -------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    in_shape = x.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return _make(out, (x,), backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _make(x.data.transpose(axes), (x,), backward)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concatenate: incompatible shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(out, tuple(tensors), backward)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def slice_(x, idx):
    x = as_tensor(x)
    try:
        out = x.data[idx]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {x.shape}") from None
    basic = _is_basic_index(idx)
    if basic:
        out = out.copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), backward)


def roll(x, offset, axis):
    """Circular shift; the offset is taken modulo the axis length."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"roll: axis {axis} out of range for shape {x.shape}")
    n = x.shape[axis]
    offset = int(offset) % n if n else 0

    def backward(g):
        return (np.roll(g, -offset, axis=axis),)

    return _make(np.roll(x.data, offset, axis=axis), (x,), backward)


# reductions ---------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)) if g.ndim else g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        return (np.array(_expand(g, shape, axis, keepdims)),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        return (np.array(_expand(g, shape, axis, keepdims)) / count,)

    return _make(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), backward)


def global_average_pool(x):
    """Mean over the time axis: ``(B, T, D) -> (B, D)``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"global_average_pool expects (B, T, D), got {x.shape}")
    return reduce_mean(x, axis=1)


# nonlinearities -----------------------------------------------------------

def leaky_relu(x, alpha=0.2):
    x = as_tensor(x)
    xd = x.data
    if not 0 <= alpha <= 1:
        raise DomainError(f"leaky_relu slope must lie in [0, 1], got {alpha}")
    # max(x, a x) equals the piecewise definition for 0 <= a <= 1
    out = np.maximum(xd, alpha * xd)

    def backward(g):
        one, a = xd.dtype.type(1.0), xd.dtype.type(alpha)
        return (g * np.where(xd > 0, one, a),)

    return _make(out, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _make(out, (x,), backward)


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive input")
    d = x.data

    def backward(g):
        return (g / d,)

    return _make(np.log(d), (x,), backward)


def clip(x, lo, hi):
    """Clamp into ``[lo, hi]``; clamped entries pass no gradient."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return _make(np.clip(x.data, lo, hi), (x,), backward)


def logsumexp(x, axis=-1):
    x = as_tensor(x)
    _check_finite(x.data, "logsumexp")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    weights = e / s

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _make(out, (x,), backward)
