"""Array-valued reverse-mode tape and second-order coordinate jets.

Two layers live here:

* :class:`Tape` / :class:`Var` record numpy array arithmetic and run a single
  reverse sweep to get parameter gradients.
* :class:`Jet2` carries ``(value, grad, hess)`` of a scalar field, where
  ``grad[i]`` and ``hess[i]`` are the first and second partial derivatives
  along input coordinate ``i``.  Jet fields may be plain arrays or tape
  variables, so the jet arithmetic itself is recorded on the tape and
  gradients of losses containing the Laplacian are exact.

Every module-level math function (:func:`tanh`, :func:`sqrt`, :func:`where`, ...)
accepts either arrays or :class:`Var` and dispatches accordingly.
"""

import numpy as np

from .errors import StateError


class Tape:
    """Append-only record of primitive operations.

    Node ``k`` stores its operation kind, operand indices (all ``< k``) and one
    local vector-Jacobian closure per operand.
    """

    def __init__(self):
        self.kinds = []
        self.parents = []
        self.partials = []
        self.values = []
        self.params = []
        self.adjoints = None

    def __len__(self):
        return len(self.values)

    def record(self, kind, value, operands=()):
        index = len(self.values)
        parents = tuple(v.index for v, _ in operands)
        for p in parents:
            if p >= index:
                raise StateError("operand recorded after its consumer")
        self.kinds.append(kind)
        self.parents.append(parents)
        self.partials.append(tuple(fn for _, fn in operands))
        self.values.append(value)
        return Var(self, index, value)

    def leaf(self, value):
        return self.record("const", np.asarray(value, dtype=np.float64))

    def param(self, value):
        """Register a trainable array; gradients come back in registration order."""
        var = self.record("param", np.array(value, dtype=np.float64))
        self.params.append(var.index)
        return var


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

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
        return self.tape.record("neg", -self.value, [(self, lambda g: -g)])

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(kind, a, b, out, ga, gb):
    """Record ``out = a (op) b``; ``ga``/``gb`` map the output adjoint to operand adjoints."""
    tape = _tape_of(a, b)
    operands = []
    if isinstance(a, Var):
        shape = a.value.shape
        operands.append((a, lambda g: _unbroadcast(ga(g), shape)))
    if isinstance(b, Var):
        shape_b = b.value.shape
        operands.append((b, lambda g: _unbroadcast(gb(g), shape_b)))
    return tape.record(kind, out, operands)


def add(a, b):
    if _tape_of(a, b) is None:
        return a + b
    return _binary("add", a, b, value_of(a) + value_of(b), lambda g: g, lambda g: g)


def sub(a, b):
    if _tape_of(a, b) is None:
        return a - b
    return _binary("sub", a, b, value_of(a) - value_of(b), lambda g: g, lambda g: -g)


def mul(a, b):
    if _tape_of(a, b) is None:
        return a * b
    av, bv = value_of(a), value_of(b)
    return _binary("mul", a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b):
    if _tape_of(a, b) is None:
        return a / b
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _binary("div", a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def matmul(a, b):
    """``a @ b`` with ``b`` a 2-D matrix and ``a`` of shape ``(..., k)``."""
    if _tape_of(a, b) is None:
        return a @ b
    av, bv = value_of(a), value_of(b)
    if bv.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    operands = []
    if isinstance(a, Var):
        operands.append((a, lambda g: g @ bv.T))
    if isinstance(b, Var):
        k, m = bv.shape
        operands.append((b, lambda g: av.reshape(-1, k).T @ g.reshape(-1, m)))
    return _tape_of(a, b).record("matmul", av @ bv, operands)


def _unary(kind, x, out, dfn):
    """Record an elementwise map; ``dfn()`` returns the local derivative array."""
    return x.tape.record(kind, out, [(x, lambda g: g * dfn())])


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(x)
    t = np.tanh(x.value)
    return _unary("tanh", x, t, lambda: 1.0 - t * t)


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    e = np.exp(x.value)
    return _unary("exp", x, e, lambda: e)


def log(x):
    if not isinstance(x, Var):
        return np.log(x)
    v = x.value
    return _unary("log", x, np.log(v), lambda: 1.0 / v)


def sin(x):
    if not isinstance(x, Var):
        return np.sin(x)
    v = x.value
    return _unary("sin", x, np.sin(v), lambda: np.cos(v))


def cos(x):
    if not isinstance(x, Var):
        return np.cos(x)
    v = x.value
    return _unary("cos", x, np.cos(v), lambda: -np.sin(v))


def sqrt(x):
    if not isinstance(x, Var):
        return np.sqrt(x)
    s = np.sqrt(x.value)
    return _unary("sqrt", x, s, lambda: 0.5 / s)


def power(x, p):
    """``x ** p`` for a constant exponent."""
    if not isinstance(x, Var):
        return x**p
    v = x.value
    return _unary("pow", x, v**p, lambda: p * v ** (p - 1))


def absolute(x):
    if not isinstance(x, Var):
        return np.abs(x)
    v = x.value
    return _unary("abs", x, np.abs(v), lambda: np.sign(v))


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    v = x.value
    return _unary("relu", x, np.maximum(v, 0.0), lambda: (v > 0).astype(np.float64))


def sign(x):
    """Sign with ``sign(0) = 0``; piecewise constant, so never on the tape."""
    return np.sign(value_of(x))


def where(cond, a, b):
    """Elementwise select with a constant mask; the unselected branch gets zero adjoint."""
    cond = np.asarray(value_of(cond), dtype=bool)
    tape = _tape_of(a, b)
    if tape is None:
        return np.where(cond, a, b)
    out = np.where(cond, value_of(a), value_of(b))
    return _binary(
        "where", a, b, out,
        lambda g: np.where(cond, g, 0.0),
        lambda g: np.where(cond, 0.0, g),
    )


def sum_(x, axis=None):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    shape = x.value.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return x.tape.record("sum", np.sum(x.value, axis=axis), [(x, vjp)])


def mean(x, axis=None):
    if not isinstance(x, Var):
        return np.mean(x, axis=axis)
    n = x.value.size if axis is None else x.value.shape[axis]
    return sum_(x, axis) * (1.0 / n)


def take(x, idx):
    if not isinstance(x, Var):
        return x[idx]
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return full

    return x.tape.record("index", x.value[idx], [(x, vjp)])


def stack(items, axis=0):
    tape = _tape_of(*items)
    values = [np.broadcast_to(value_of(v), np.shape(value_of(items[0]))) for v in items]
    out = np.stack(values, axis=axis)
    if tape is None:
        return out
    operands = []
    for k, v in enumerate(items):
        if isinstance(v, Var):
            shape = v.value.shape
            operands.append((v, lambda g, k=k, shape=shape: _unbroadcast(np.take(g, k, axis=axis), shape)))
    return tape.record("stack", out, operands)


def norm(x, axis=0):
    """Euclidean norm along ``axis``; the derivative at the origin is taken as zero."""
    if not isinstance(x, Var):
        return np.sqrt(np.sum(x * x, axis=axis))
    v = x.value
    n = np.sqrt(np.sum(v * v, axis=axis))

    def vjp(g):
        nn = np.expand_dims(n, axis)
        safe = np.where(nn > 0, nn, 1.0)
        return np.expand_dims(g, axis) * np.where(nn > 0, v / safe, 0.0)

    return x.tape.record("norm", n, [(x, vjp)])


def backward(tape, output):
    """Reverse sweep from ``output``; returns d(output)/d(params) as one flat vector.

    Non-scalar outputs are seeded with ones, i.e. the gradient of their sum.
    Parameters are concatenated in registration order, each raveled row-major.
    """
    if len(tape) == 0:
        raise StateError("backward called on an empty tape")
    index = output.index if isinstance(output, Var) else int(output)
    if not 0 <= index < len(tape):
        raise ValueError(f"node {index} is not on the tape")
    adj = [None] * len(tape)
    adj[index] = np.ones_like(tape.values[index])
    for k in range(index, -1, -1):
        g = adj[k]
        if g is None:
            continue
        for p, fn in zip(tape.parents[k], tape.partials[k]):
            gp = fn(g)
            adj[p] = gp if adj[p] is None else adj[p] + gp
    tape.adjoints = adj
    parts = []
    for p in tape.params:
        a = adj[p]
        parts.append(np.zeros(tape.values[p].size) if a is None else np.ravel(a))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# jets


class Jet2:
    """Value, gradient and Hessian diagonal of a scalar field.

    ``grad`` and ``hess`` carry a leading axis of length ``d`` (the input
    dimension); the remaining axes broadcast against ``value``, so a jet can
    describe one point, a batch of points, or a batch of hidden features.
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value, grad, hess):
        if len(grad) != len(hess):
            raise ValueError("grad and hess must have the same length")
        if len(grad) < 1:
            raise ValueError("jets need at least one input coordinate")
        self.value = value
        self.grad = grad
        self.hess = hess

    @property
    def dim(self):
        return len(self.grad)

    @classmethod
    def constant(cls, value, dim):
        value = np.asarray(value, dtype=np.float64) if not isinstance(value, Var) else value
        zeros = np.zeros((dim,) + np.shape(value_of(value)))
        return cls(value, zeros, zeros)

    def laplacian(self):
        return sum_(self.hess, axis=0)

    def __repr__(self):
        return f"Jet2(value={value_of(self.value)!r}, grad={value_of(self.grad)!r}, hess={value_of(self.hess)!r})"

    def __add__(self, other):
        if isinstance(other, Jet2):
            _check_dims(self, other)
            return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)
        return Jet2(self.value + other, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_product(self, other)
        return Jet2(self.value * other, self.grad * other, self.hess * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return jet_product(self, jet_reciprocal(other))
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return jet_reciprocal(self) * other


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ValueError(f"jet dimension mismatch: {a.dim} vs {b.dim}")


def jet_lift_input(x, i):
    """Seed jet of coordinate ``i``: value ``x_i``, grad ``e_i``, zero curvature."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if not 0 <= i < d:
        raise ValueError(f"coordinate index {i} out of range for d={d}")
    value = x[..., i]
    grad = np.zeros((d,) + value.shape)
    grad[i] = 1.0
    return Jet2(value, grad, np.zeros_like(grad))


def lift_point(x):
    """All ``d`` coordinate jets of a point (or a batch of points, shape ``(n, d)``)."""
    x = np.asarray(x, dtype=np.float64)
    return [jet_lift_input(x, i) for i in range(x.shape[-1])]


def chain(a, f0, f1, f2):
    """Compose a scalar map with known ``f``, ``f'``, ``f''`` (evaluated at ``a.value``)."""
    return Jet2(f0, f1 * a.grad, f1 * a.hess + f2 * (a.grad * a.grad))


def jet_tanh(a):
    t = tanh(a.value)
    s = 1.0 - t * t
    return chain(a, t, s, -2.0 * t * s)


def jet_exp(a):
    e = exp(a.value)
    return chain(a, e, e, e)


def jet_log(a):
    r = 1.0 / a.value
    return chain(a, log(a.value), r, -r * r)


def jet_sin(a):
    s, c = sin(a.value), cos(a.value)
    return chain(a, s, c, -s)


def jet_cos(a):
    s, c = sin(a.value), cos(a.value)
    return chain(a, c, -s, -c)


def jet_sqrt(a):
    s = sqrt(a.value)
    r = 1.0 / s
    return chain(a, s, 0.5 * r, -0.25 * r * r * r)


def jet_reciprocal(a):
    r = 1.0 / a.value
    return chain(a, r, -r * r, 2.0 * r * r * r)


def jet_power(a, p):
    v = a.value
    return chain(a, power(v, p), p * power(v, p - 1), p * (p - 1) * power(v, p - 2))


def jet_abs(a):
    """|a| away from a = 0 (sign-branch derivatives, zero curvature)."""
    s = sign(a.value)
    return chain(a, absolute(a.value), s, 0.0 * s)


def jet_affine(inputs, weights, bias):
    """``sum_k weights[k] * inputs[k] + bias`` with the bias on the value only."""
    if len(inputs) != len(weights):
        raise ValueError("weights and inputs differ in length")
    if not inputs:
        raise ValueError("jet_affine needs at least one input")
    out = inputs[0] * weights[0]
    for a, w in zip(inputs[1:], weights[1:]):
        out = out + a * w
    return out + bias


def jet_dense(a, weight, bias):
    """Dense layer on a jet whose last axis holds features: ``a @ W + b``."""
    return Jet2(matmul(a.value, weight) + bias, matmul(a.grad, weight), matmul(a.hess, weight))


def jet_product(a, b):
    _check_dims(a, b)
    value = a.value * b.value
    grad = a.grad * b.value + a.value * b.grad
    hess = a.hess * b.value + 2.0 * (a.grad * b.grad) + a.value * b.hess
    return Jet2(value, grad, hess)


def jet_where(cond, a, b):
    """Branch select; either side may be a jet or a constant."""
    cond = np.asarray(value_of(cond), dtype=bool)
    ref = a if isinstance(a, Jet2) else b
    shape = np.shape(value_of(ref.value))
    if not isinstance(a, Jet2):
        a = Jet2.constant(np.broadcast_to(np.asarray(a, dtype=np.float64), shape), ref.dim)
    if not isinstance(b, Jet2):
        b = Jet2.constant(np.broadcast_to(np.asarray(b, dtype=np.float64), shape), ref.dim)
    return Jet2(where(cond, a.value, b.value), where(cond, a.grad, b.grad), where(cond, a.hess, b.hess))
