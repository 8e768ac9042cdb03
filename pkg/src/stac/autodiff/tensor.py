"""Array-valued reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation on
tensors that require gradients records its parents together with a
vector-Jacobian product (VJP) closure; :func:`backprop` walks the resulting
graph in reverse topological order. Graphs are only recorded when at least
one input requires a gradient, so target computations cost nothing extra.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import DimensionError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor dispatch to Tensor's reflected ops

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.vjp = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.vjp is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def backward(self, grad=None):
        backprop(self, grad)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor.

    ``version`` is bumped on every in-place update so recorded graphs can
    detect that the weights they were built from have changed.
    """

    __slots__ = ("version",)

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.version = 0

    def assign(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise DimensionError(f"{self.name}: cannot assign shape {values.shape} to {self.data.shape}")
        self.data[...] = values
        self.version += 1

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.vjp = vjp
    return out


def backprop(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) * grad into every reachable leaf's ``.grad``."""
    if not root.requires_grad:
        raise RuntimeError("tensor does not require grad")
    grad = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if grad.shape != root.shape:
        raise DimensionError(f"output grad shape {grad.shape} != output shape {root.shape}")

    order = []
    seen = set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# elementwise / broadcasting ops --------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    base = a.data
    return _make(base ** exponent, (a,), lambda g: (g * exponent * base ** (exponent - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a):
    """log(1 + e^x), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def clip(a, lo=None, hi=None):
    """Clamp; gradient is passed only where the input lies inside [lo, hi]."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return _make(out, (a,), lambda g: (g * inside,))


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


# reductions and structure ---------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int)) or p is Ellipsis for p in parts)


def getitem(a, index):
    shape = a.shape
    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


# fused layer primitives -----------------------------------------------------

def linear(x, weight, bias):
    """x @ W + b with a single graph node."""

    def vjp(g):
        gx = g @ weight.data.T if x.requires_grad else None
        if weight.requires_grad:
            xd = x.data if x.ndim > 1 else x.data[None, :]
            gg = g if g.ndim > 1 else g[None, :]
            return gx, xd.T @ gg, gg.sum(axis=0)
        return gx, None, None

    return _make(x.data @ weight.data + bias.data, (x, weight, bias), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then apply the learnable affine map."""
    inv_n = 1.0 / x.shape[-1]
    centered = x.data - x.data.sum(axis=-1, keepdims=True) * inv_n
    var = np.einsum("...i,...i->...", centered, centered)[..., None] * inv_n
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def vjp(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            m1 = gxhat.sum(axis=-1, keepdims=True) * inv_n
            m2 = np.einsum("...i,...i->...", gxhat, xhat)[..., None] * inv_n
            gx = gxhat - m1
            gx -= xhat * m2
            gx *= inv_std
        if gain.requires_grad:
            lead = tuple(range(g.ndim - 1))
            return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
        return gx, None, None

    out = xhat * gain.data
    out += bias.data
    return _make(out, (x, gain, bias), vjp)


def masked_scale(x, mask):
    """Multiply by a constant (non-differentiable) mask array."""
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def hidden_block(x, weight, bias, mask=None, gain=None, ln_bias=None, eps=1e-5):
    """relu(layer_norm(mask * (x @ W + b))) as one graph node.

    Numerically the same as chaining :func:`linear`, :func:`masked_scale`,
    :func:`layer_norm` and :func:`relu`, with fewer temporaries. ``mask`` and
    the norm parameters are optional.
    """
    z = x.data @ weight.data + bias.data
    if mask is not None:
        z *= mask
    use_norm = gain is not None
    if use_norm:
        inv_n = 1.0 / z.shape[-1]
        z -= z.sum(axis=-1, keepdims=True) * inv_n
        inv_std = 1.0 / np.sqrt(np.einsum("...i,...i->...", z, z)[..., None] * inv_n + eps)
        xhat = z * inv_std
        y = xhat * gain.data
        y += ln_bias.data
    else:
        y = z
    active = y > 0.0
    out = np.where(active, y, 0.0)

    def vjp(g):
        gz = g * active
        grads_norm = ()
        if use_norm:
            if gain.requires_grad:
                lead = tuple(range(g.ndim - 1))
                grads_norm = ((gz * xhat).sum(axis=lead), gz.sum(axis=lead))
            else:
                grads_norm = (None, None)
            gxhat = gz * gain.data
            m1 = gxhat.sum(axis=-1, keepdims=True) * inv_n
            m2 = np.einsum("...i,...i->...", gxhat, xhat)[..., None] * inv_n
            gz = gxhat - m1
            gz -= xhat * m2
            gz *= inv_std
        if mask is not None:
            gz *= mask
        gx = gz @ weight.data.T if x.requires_grad else None
        if weight.requires_grad:
            xd = x.data if x.ndim > 1 else x.data[None, :]
            gg = gz if gz.ndim > 1 else gz[None, :]
            return (gx, xd.T @ gg, gg.sum(axis=0)) + grads_norm
        return (gx, None, None) + grads_norm

    parents = (x, weight, bias) + ((gain, ln_bias) if use_norm else ())
    return _make(out, parents, vjp)
