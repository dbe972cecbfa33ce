"""Dense float64 arrays and a small tape-based reverse-mode autodiff engine.

Every differentiable quantity is a :class:`Var` holding a numpy array and
the closures needed to push gradients back to its parents. The graph is
built fresh on every evaluation and discarded afterwards.

Non-finite values are rejected the moment a ``Var`` is created, so a
failure points at the operation that produced it instead of surfacing as
a NaN several steps later.
"""

import numpy as np

from .errors import NumericOverflowError, ShapeError

__all__ = [
    "Var",
    "as_array",
    "constant",
    "grad",
    "value_and_grad",
    "finite_diff_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "sum",
    "mean",
    "exp",
    "log",
    "square",
    "sigmoid",
    "relu",
    "softmax",
    "maximum",
    "clip",
    "take_labels",
    "dot",
]


def as_array(x, name="array"):
    """Convert ``x`` to a finite float64 ndarray (the package's NumArray)."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(name, "NaN or Inf at construction")
    return arr


class Var:
    """Node of the computation graph."""

    __slots__ = ("value", "parents", "op")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), op="const"):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericOverflowError(op)
        self.value = value
        self.parents = parents
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def constant(x):
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = constant(a), constant(b)
    return Var(
        a.value + b.value,
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
        "add",
    )


def sub(a, b):
    a, b = constant(a), constant(b)
    return Var(
        a.value - b.value,
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: -_unbroadcast(g, b.shape))),
        "sub",
    )


def mul(a, b):
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    return Var(
        av * bv,
        (
            (a, lambda g: _unbroadcast(g * bv, a.shape)),
            (b, lambda g: _unbroadcast(g * av, b.shape)),
        ),
        "mul",
    )


def div(a, b):
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericOverflowError("div", "division by zero")
    out = av / bv
    return Var(
        out,
        (
            (a, lambda g: _unbroadcast(g / bv, a.shape)),
            (b, lambda g: _unbroadcast(-g * out / bv, b.shape)),
        ),
        "div",
    )


def neg(a):
    a = constant(a)
    return Var(-a.value, ((a, lambda g: -g),), "neg")


def matmul(a, b):
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def grad_a(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T

    def grad_b(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g

    return Var(av @ bv, ((a, grad_a), (b, grad_b)), "matmul")


def dot(a, b):
    return matmul(a, b)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = constant(a)
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return Var(np.sum(a.value, axis=axis), ((a, back),), "sum")


def mean(a, axis=None):
    a = constant(a)
    n = a.value.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean of an empty array")
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / n, shape).copy()

    return Var(np.mean(a.value, axis=axis), ((a, back),), "mean")


def exp(a):
    a = constant(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return Var(out, ((a, lambda g: g * out),), "exp")


def log(a):
    a = constant(a)
    av = a.value
    if np.any(av <= 0):
        raise NumericOverflowError("log", "non-positive argument")
    return Var(np.log(av), ((a, lambda g: g / av),), "log")


def square(a):
    a = constant(a)
    av = a.value
    return Var(av * av, ((a, lambda g: 2.0 * g * av),), "square")


def sigmoid(a):
    a = constant(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return Var(out, ((a, lambda g: g * out * (1.0 - out)),), "sigmoid")


def relu(a):
    a = constant(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),), "relu")


def softmax(a, axis=-1):
    a = constant(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return out * (g - np.sum(g * out, axis=axis, keepdims=True))

    return Var(out, ((a, back),), "softmax")


def maximum(a, floor):
    """Elementwise ``max(a, floor)`` for a constant ``floor``; zero gradient where floored."""
    a = constant(a)
    mask = a.value >= floor
    return Var(np.where(mask, a.value, floor), ((a, lambda g: g * mask),), "maximum")


def clip(a, low, high):
    a = constant(a)
    mask = (a.value >= low) & (a.value <= high)
    return Var(np.clip(a.value, low, high), ((a, lambda g: g * mask),), "clip")


def take_labels(a, labels):
    """Row-wise gather ``a[n, labels[n]]`` of a 2-D ``a``."""
    a = constant(a)
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, labels), g)
        return out

    return Var(a.value[rows, labels], ((a, back),), "take_labels")


def getitem(a, idx):
    a = constant(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return Var(a.value[idx], ((a, back),), "getitem")


def reshape(a, shape):
    a = constant(a)
    old = a.shape
    return Var(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),), "reshape")


def transpose(a):
    a = constant(a)
    return Var(a.value.T, ((a, lambda g: g.T),), "transpose")


def _toposort(out):
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(out, wrt):
    """Gradients of scalar ``out`` with respect to each Var in ``wrt``."""
    if out.value.shape != ():
        raise ShapeError(f"backward needs a scalar output, got shape {out.value.shape}")
    grads = {id(out): np.ones(())}
    for node in reversed(_toposort(out)):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, rule in node.parents:
            contrib = rule(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    result = []
    for w in wrt:
        g = grads.get(id(w))
        g = np.zeros(w.shape) if g is None else np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericOverflowError("backward", "non-finite gradient")
        result.append(g)
    return result


def value_and_grad(f, theta):
    """Return ``(f(theta), grad f(theta))`` for scalar-valued ``f``."""
    theta_var = Var(as_array(theta, "theta"), op="input")
    out = f(theta_var)
    out = constant(out)
    (g,) = backward(out, [theta_var])
    return float(out.value), g


def grad(f, theta):
    """Gradient of the scalar function ``f`` at ``theta``."""
    return value_and_grad(f, theta)[1]


def finite_diff_grad(f, theta, h=1e-5):
    """Central-difference gradient estimate, one coordinate at a time."""
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    theta = np.array(as_array(theta, "theta"), dtype=np.float64)
    flat = theta.reshape(-1)
    out = np.zeros_like(flat)

    def value(t):
        v = f(t)
        return float(v.value if isinstance(v, Var) else v)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = value(theta)
        flat[i] = orig - h
        fm = value(theta)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(theta.shape)
