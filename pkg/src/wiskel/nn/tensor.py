"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional gradient buffer. Ops build
a DAG of parent links with per-node vector-Jacobian closures; ``backward`` on a
scalar walks the DAG in reverse topological order and accumulates gradients.

Gradient accumulation semantics: ``backward`` adds into ``grad``. Calling it
twice without zeroing doubles the gradients; callers that want fresh gradients
zero them first (``ParamStore.zero_grads``). This is deliberate so losses can
be accumulated across micro-batches.

Everything is float64 and single-threaded; identical inputs give bit-identical
outputs and gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import DimensionError

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_scalar",
    "exp",
    "log",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "sum_",
    "mean_",
    "relu",
    "tanh",
    "softmax",
]

# Largest float64 strictly below 1; used to keep tanh inside the open interval.
_ONE_INSIDE = np.nextafter(1.0, 0.0)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 value that can participate in autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        """The underlying array (shared, not copied)."""
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping ----------------------------------------------
    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar.

        Accumulates into leaf ``grad`` buffers; interior-node gradients are
        consumed and cleared during the sweep, so calling ``backward`` twice
        adds the same leaf gradients twice rather than compounding through
        stale interior state.
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                upstream = node.grad
                node.grad = None
                node._vjp(upstream)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Compute values without recording the graph.

    Inside the block every op returns a plain value tensor with no parent
    links or vjp closures, so forward buffers are freed as soon as each op
    completes instead of being pinned until ``backward``. Inference-only
    paths use this; values are bit-identical to a recorded forward.
    """
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _make(data, parents, vjp):
    """Wrap an op result; graph links only kept when a parent needs gradients."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), vjp)


def neg(a):
    a = as_tensor(a)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _make(-a.data, (a,), vjp)


def pow_scalar(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), vjp)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(out_data, (a,), vjp)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires ndim >= 2 on both operands, got {a.ndim} and {b.ndim}"
        )
    out_data = np.matmul(a.data, b.data)

    def vjp(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), vjp)


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), vjp)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inverse))

    return _make(out_data, (a,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(index)])

    return _make(out_data, tuple(tensors), vjp)


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(in_shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, in_shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(
                np.ascontiguousarray(_expand_reduced(g, a.data.shape, axis, keepdims))
            )

    return _make(out_data, (a,), vjp)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out_data.size, 1)

    def vjp(g):
        if a.requires_grad:
            expanded = _expand_reduced(g, a.data.shape, axis, keepdims)
            a.accumulate_grad(expanded / count)

    return _make(out_data, (a,), vjp)


# -- nonlinearities -----------------------------------------------------------

def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _make(out_data, (a,), vjp)


def tanh(a):
    """Hyperbolic tangent clipped to the open interval (-1, 1).

    float64 ``np.tanh`` saturates to exactly +-1.0 for |x| above ~19; outputs
    are nudged to the nearest representable value strictly inside the interval
    so the documented range contract holds for any input.
    """
    a = as_tensor(a)
    out_data = np.clip(np.tanh(a.data), -_ONE_INSIDE, _ONE_INSIDE)

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), vjp)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out_data * (g - dot))

    return _make(out_data, (a,), vjp)
