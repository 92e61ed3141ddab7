"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations on :class:`Tensor` objects are recorded on the active :class:`Tape`
whenever at least one input requires a gradient.  Outside of a tape the same
operations simply compute values, so model code runs unchanged for sampling
and for training.

    >>> x = Parameter(3.0)
    >>> with Tape() as tape:
    ...     loss = x * x
    >>> backprop(tape, loss, [x])[0]
    array(6.)
"""

from __future__ import annotations

import numpy as np
from scipy import sparse, special

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backprop",
    "as_tensor",
    "constant",
    "primitive",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "tanh",
    "leaky_relu",
    "sin",
    "cos",
    "square",
    "gammaln",
    "logsumexp",
    "log_softmax",
    "concat",
    "where",
    "segment_sum",
    "stop_gradient",
]

_TAPES: list["Tape"] = []


def current_tape():
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; only one tape is active at a time per thread
    of control (nested tapes shadow the outer one).
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, parents, vjp):
        out.node = len(self.nodes)
        self.nodes.append((out, parents, vjp))

    def reset(self):
        for out, _, _ in self.nodes:
            out.node = None
        self.nodes = []


class Tensor:
    """Dense float64 array, optionally tracked on a tape."""

    __slots__ = ("value", "requires_grad", "node", "name")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else self.value.item()

    def numpy(self):
        return self.value

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # reductions and shape -------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Leaf tensor whose gradient is requested by :func:`backprop`."""

    __slots__ = ()

    def __init__(self, value, name=None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    return Tensor(x.value if isinstance(x, Tensor) else x)


stop_gradient = constant


def primitive(value, parents, vjp):
    """Wrap ``value`` as the output of a differentiable operation.

    ``vjp(g)`` must return one cotangent (or ``None``) per parent, each
    broadcast-compatible with that parent's shape.
    """
    out = Tensor(value)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backprop(tape, loss, params):
    """Gradients of the scalar ``loss`` with respect to each of ``params``.

    Consumes the tape: it is reset afterwards.  Parameters that do not
    influence the loss receive zero gradients.
    """
    if loss.value.size != 1:
        tape.reset()
        raise ValueError(f"backprop needs a scalar loss, got shape {loss.shape}")
    grads = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.value)
    for out, parents, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, vjp(g)):
            if pg is None or not p.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=np.float64), p.shape)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    tape.reset()
    return [grads.get(id(p), np.zeros_like(p.value)) for p in params]


# elementwise binary -------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return primitive(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return primitive(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return primitive(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return primitive(out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a):
    return primitive(-a.value, (a,), lambda g: (-g,))


def power(a, exponent):
    if isinstance(exponent, Tensor):
        raise TypeError("tensor exponents are not supported")
    av = a.value
    return primitive(av**exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return primitive(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# elementwise unary --------------------------------------------------------


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return primitive(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    av = a.value
    with np.errstate(divide="ignore"):
        out = np.log(av)
    return primitive(out, (a,), lambda g: (g / av,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return primitive(out, (a,), lambda g: (0.5 * g / out,))


def square(a):
    a = as_tensor(a)
    av = a.value
    return primitive(av * av, (a,), lambda g: (2.0 * g * av,))


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.value)
    return primitive(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    return primitive(out, (a,), lambda g: (g * special.expit(av),))


def log_sigmoid(a):
    a = as_tensor(a)
    av = a.value
    out = -np.logaddexp(0.0, -av)
    return primitive(out, (a,), lambda g: (g * special.expit(-av),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return primitive(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    av = a.value
    out = np.maximum(av, slope * av) if slope <= 1.0 else np.minimum(av, slope * av)
    return primitive(out, (a,), lambda g: (np.where(av > 0, g, slope * g),))


def sin(a):
    a = as_tensor(a)
    av = a.value
    return primitive(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a):
    a = as_tensor(a)
    av = a.value
    return primitive(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def gammaln(a):
    a = as_tensor(a)
    av = a.value
    return primitive(special.gammaln(av), (a,), lambda g: (g * special.digamma(av),))


# reductions and structure -------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return primitive(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    av = a.value
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True)) + m
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(av - out_k)
        return (g * np.nan_to_num(w, nan=0.0),)

    return primitive(out, (a,), vjp)


def log_softmax(a, axis=-1):
    return a - logsumexp(a, axis=axis, keepdims=True)


def reshape(a, shape):
    old = a.shape
    return primitive(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a):
    return primitive(a.value.T, (a,), lambda g: (g.T,))


def _is_advanced(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a, index):
    shape = a.shape
    advanced = _is_advanced(index)

    def vjp(g):
        if isinstance(index, np.ndarray) and index.ndim == 1 and index.dtype.kind in "iu":
            if index.size == 0:
                return (np.zeros(shape),)
            # row gather: scatter-add back through a sparse selection matrix
            sel = sparse.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(shape[0], index.size))
            return (np.asarray(sel @ g.reshape(index.size, -1)).reshape(shape),)
        full = np.zeros(shape)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return primitive(a.value[index], (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    return primitive(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def where(mask, a, b):
    """Select ``a`` where ``mask`` is true, else ``b``; ``mask`` is constant."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.value, b.value)
    return primitive(out, (a, b), lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)))


def segment_sum(a, ids, n):
    """Sum entries of the 1-d tensor ``a`` into ``n`` buckets given by ``ids``."""
    a = as_tensor(a)
    ids = np.asarray(ids, dtype=np.intp)
    out = np.bincount(ids, weights=a.value, minlength=n).astype(np.float64)
    return primitive(out, (a,), lambda g: (g[ids],))
