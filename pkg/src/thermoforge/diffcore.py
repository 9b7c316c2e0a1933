"""Small differentiation engine.

Two mechanisms live here:

* :class:`Var` / :class:`Tape` -- reverse accumulation over an append-only
  record of array operations.  Values are float64 numpy arrays (0-d for plain
  scalars), so one recorded operation covers a whole batch of quadrature
  points.
* :class:`Dual` -- forward-mode numbers whose components may themselves be
  arrays, tape variables or duals.  Nesting two duals yields exact second
  derivatives; putting tape variables inside a dual gives parameter gradients
  of expressions that already contain input derivatives (stress, temperature,
  heat flux).

All elementary functions (:func:`exp`, :func:`softplus`, ...) dispatch on the
argument type, so model code is written once and evaluated with plain arrays,
duals or tape variables.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "NonFiniteError",
    "Tape",
    "Var",
    "Dual",
    "grad",
    "value_and_grad",
    "derivative",
    "second_derivative",
    "value",
    "exp",
    "log",
    "sqrt",
    "safe_sqrt",
    "tanh",
    "erf",
    "sigmoid",
    "softplus",
    "relu",
    "step",
    "gelu",
    "exp_clamped",
    "absolute",
    "maximum",
    "minimum",
    "stack",
    "concatenate",
    "scatter",
    "einsum",
]

EXP_CLAMP = 30.0
_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


class DomainError(ValueError):
    """Argument outside the domain of an elementary function."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or infinity."""


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Append-only record of operations.

    Node ``i`` stores the indices of its parents (all ``< i``) and, for each
    parent, a function mapping the adjoint of node ``i`` to the contribution
    to that parent's adjoint.
    """

    def __init__(self):
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[tuple[Callable, ...]] = []
        self.shapes: list[tuple[int, ...]] = []

    def __len__(self):
        return len(self.parents)

    def variable(self, x) -> "Var":
        return self._push(np.array(x, dtype=np.float64), (), ())

    def _push(self, val, parents, vjps) -> "Var":
        idx = len(self.parents)
        self.parents.append(tuple(p.index for p in parents))
        self.vjps.append(tuple(vjps))
        self.shapes.append(np.shape(val))
        return Var(self, idx, val)

    def record(self, val, parents: Sequence["Var"], vjps: Sequence[Callable]) -> "Var":
        return self._push(np.asarray(val, dtype=np.float64), parents, vjps)

    def backward(self, out: "Var", seed=None) -> list:
        """Adjoints of every node with respect to ``out`` (None if unreached)."""
        if out.tape is not self:
            raise ValueError("output variable belongs to another tape")
        adj: list = [None] * len(self.parents)
        adj[out.index] = np.ones(self.shapes[out.index]) if seed is None else np.asarray(seed, float)
        for i in range(out.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            for p, vjp in zip(self.parents[i], self.vjps[i]):
                contrib = vjp(g)
                if adj[p] is None:
                    adj[p] = np.asarray(contrib, dtype=np.float64)
                else:
                    adj[p] = adj[p] + contrib
        return adj


def _as_var_pair(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    if isinstance(a, Var) and isinstance(b, Var) and a.tape is not b.tape:
        raise ValueError("operands recorded on different tapes")
    return tape


class Var:
    """An array-valued node on a :class:`Tape`."""

    __array_ufunc__ = None
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, Var):
            _as_var_pair(self, other)
            sa, sb = self.shape, other.shape
            return self.tape.record(
                self.value + other.value,
                (self, other),
                (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)),
            )
        o = np.asarray(other, dtype=np.float64)
        sa = self.shape
        return self.tape.record(self.value + o, (self,), (lambda g: _unbroadcast(g, sa),))

    __radd__ = __add__

    def __neg__(self):
        return self.tape.record(-self.value, (self,), (lambda g: -g,))

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, Var):
            _as_var_pair(self, other)
            a, b = self.value, other.value
            return self.tape.record(
                a * b,
                (self, other),
                (lambda g: _unbroadcast(g * b, a.shape), lambda g: _unbroadcast(g * a, b.shape)),
            )
        o = np.asarray(other, dtype=np.float64)
        sa = self.shape
        return self.tape.record(self.value * o, (self,), (lambda g: _unbroadcast(g * o, sa),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, Var):
            return self * _reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return _reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, (Var, Dual)):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        a = self.value
        return self.tape.record(a**p, (self,), (lambda g: g * p * a ** (p - 1.0),))

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    # shape manipulation ---------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = self.value.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return self.tape.record(out, (self,), (vjp,))

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return self.tape.record(self.value.reshape(*shape), (self,), (lambda g: np.reshape(g, old),))

    def __getitem__(self, idx):
        shape = self.shape

        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice)) for p in parts)

        def vjp(g):
            out = np.zeros(shape)
            if basic:
                # basic indexing never repeats an element
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return out

        return self.tape.record(self.value[idx], (self,), (vjp,))

    def swapaxes(self, a, b):
        return self.tape.record(self.value.swapaxes(a, b), (self,), (lambda g: np.swapaxes(g, a, b),))


def _reciprocal(x: Var) -> Var:
    a = x.value
    r = 1.0 / a
    return x.tape.record(r, (x,), (lambda g: -g * r * r,))


def _matmul(a, b):
    if isinstance(a, Var) and isinstance(b, Var):
        tape = _as_var_pair(a, b)
        av, bv = a.value, b.value
        return tape.record(av @ bv, (a, b), (_mm_left(av, bv), _mm_right(av, bv)))
    if isinstance(a, Var):
        av, bv = a.value, np.asarray(b, float)
        return a.tape.record(av @ bv, (a,), (_mm_left(av, bv),))
    av, bv = np.asarray(a, float), b.value
    return b.tape.record(av @ bv, (b,), (_mm_right(av, bv),))


def _mm_left(av, bv):
    if bv.ndim != 2:
        raise NotImplementedError("matmul gradient needs a 2-d right operand")

    def vjp(g):
        return _unbroadcast(g @ bv.T, av.shape) if av.ndim > 1 else g @ bv.T

    return vjp


def _mm_right(av, bv):
    if bv.ndim != 2:
        raise NotImplementedError("matmul gradient needs a 2-d right operand")

    def vjp(g):
        if av.ndim == 1:
            return np.outer(av, g)
        a2 = av.reshape(-1, av.shape[-1])
        g2 = np.reshape(g, (-1, g.shape[-1]))
        if a2.shape[0] != g2.shape[0]:
            a2 = np.broadcast_to(av, g.shape[:-1] + av.shape[-1:]).reshape(-1, av.shape[-1])
        return a2.T @ g2

    return vjp


class Dual:
    """Forward-mode number ``val + eps * d``.

    ``eps`` either has the shape of ``val`` (one direction) or a leading
    extra axis holding several directions at once.  Components may be
    arrays, :class:`Var` or :class:`Dual` instances.
    """

    __array_ufunc__ = None
    __slots__ = ("val", "eps")

    def __init__(self, val, eps):
        self.val = val
        self.eps = eps

    def __repr__(self):
        return f"Dual({self.val!r}, {self.eps!r})"

    @property
    def shape(self):
        return np.shape(value(self))

    @property
    def ndim(self):
        return len(self.shape)

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val + o.val, self.eps + o.eps)
        return Dual(self.val + o, self.eps)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val - o.val, self.eps - o.eps)
        return Dual(self.val - o, self.eps)

    def __rsub__(self, o):
        return Dual(o - self.val, -self.eps)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.val * o.val, self.eps * o.val + self.val * o.eps)
        return Dual(self.val * o, self.eps * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            inv = 1.0 / o.val
            q = self.val * inv
            return Dual(q, (self.eps - q * o.eps) * inv)
        inv = 1.0 / o
        return Dual(self.val * inv, self.eps * inv)

    def __rtruediv__(self, o):
        inv = 1.0 / self.val
        return Dual(o * inv, -(o * inv * inv) * self.eps)

    def __pow__(self, p):
        if isinstance(p, (Var, Dual)):
            raise TypeError("only constant exponents are supported")
        return Dual(self.val**p, (p * self.val ** (p - 1.0)) * self.eps)

    def __matmul__(self, w):
        if isinstance(w, Dual):
            raise TypeError("dual right operand in matmul is not supported")
        return Dual(self.val @ w, self.eps @ w)

    def sum(self, axis=None):
        if axis is None or axis >= 0:
            raise ValueError("Dual.sum requires a negative axis")
        return Dual(self.val.sum(axis=axis), self.eps.sum(axis=axis))

    def __getitem__(self, idx):
        if not isinstance(idx, tuple) or idx[0] is not Ellipsis:
            raise IndexError("Dual indexing must start with Ellipsis")
        return Dual(self.val[idx], self.eps[idx])


def value(x):
    """Plain numeric value of ``x`` (strips duals and tape nodes)."""
    while isinstance(x, Dual):
        x = x.val
    if isinstance(x, Var):
        return x.value
    return x


# elementary functions -------------------------------------------------------


def _unary(f_np: Callable, df: Callable, name: str):
    """Build a dispatching elementary function from a numpy kernel and a
    derivative expressed with dispatching functions."""

    def op(x):
        if isinstance(x, Dual):
            return Dual(op(x.val), df(x.val) * x.eps)
        if isinstance(x, Var):
            xv = x.value
            out = f_np(xv)
            d = df(xv)
            return x.tape.record(out, (x,), (lambda g: g * d,))
        return f_np(np.asarray(x, dtype=np.float64))

    op.__name__ = name
    return op


def _np_log(x):
    if np.any(x <= 0):
        raise DomainError("log of non-positive argument")
    return np.log(x)


def _np_sqrt(x):
    if np.any(x <= 0):
        raise DomainError("sqrt of non-positive argument")
    return np.sqrt(x)


def _np_safe_sqrt(x):
    if np.any(x < 0):
        raise DomainError("sqrt of negative argument")
    return np.sqrt(x)


def _np_softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _np_sigmoid(x):
    return special.expit(x)


def _np_step(x):
    return (x > 0).astype(np.float64)


def step(x):
    """Heaviside step with value 0 at 0; treated as locally constant."""
    return _np_step(np.asarray(value(x), dtype=np.float64))


exp = _unary(np.exp, lambda x: exp(x), "exp")
log = _unary(_np_log, lambda x: 1.0 / x, "log")
sqrt = _unary(_np_sqrt, lambda x: 0.5 / sqrt(x), "sqrt")
tanh = _unary(np.tanh, lambda x: 1.0 - tanh(x) ** 2, "tanh")
erf = _unary(special.erf, lambda x: _TWO_OVER_SQRT_PI * exp(-(x * x)), "erf")
sigmoid = _unary(_np_sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x)), "sigmoid")
softplus = _unary(_np_softplus, lambda x: sigmoid(x), "softplus")
relu = _unary(lambda x: np.maximum(x, 0.0), step, "relu")
absolute = _unary(np.abs, lambda x: np.sign(np.asarray(value(x), dtype=np.float64)), "absolute")


def _safe_sqrt_deriv(x):
    xv = np.asarray(value(x), dtype=np.float64)
    mask = xv > 0
    # 0 at the origin: the subgradient-consistent choice for norm kinks
    return mask * (0.5 / sqrt(x * mask + (1.0 - mask)))


safe_sqrt = _unary(_np_safe_sqrt, _safe_sqrt_deriv, "safe_sqrt")


def gelu(x):
    """Exact (erf-based) GELU, ``x * Phi(x)``."""
    return x * (0.5 * (1.0 + erf(x * (1.0 / _SQRT_2))))


def minimum(a, b):
    """Elementwise min; at a tie the derivative follows ``a``."""
    return a - relu(a - b)


def maximum(a, b):
    """Elementwise max; at a tie the derivative follows ``b``."""
    return b + relu(a - b)


def exp_clamped(x):
    """exp with a linear extension beyond ``EXP_CLAMP`` (C1, no overflow)."""
    xv = np.asarray(value(x), dtype=np.float64)
    if not np.any(xv > EXP_CLAMP):
        return exp(x)
    over = relu(x - EXP_CLAMP)
    return exp(x - over) + math.exp(EXP_CLAMP) * over


# structural operations ------------------------------------------------------


def _lead(x):
    """Number of extra leading tangent axes of a dual."""
    return np.ndim(value(x.eps)) - np.ndim(value(x.val)) if isinstance(x, Dual) else 0


def _zeros_like_tangent(template: Dual, x):
    lead = np.shape(value(template.eps))[: _lead(template)]
    base = np.zeros(lead + np.shape(value(x)))
    if isinstance(template.eps, Dual):
        return Dual(base, base)
    return base


def concatenate(items: Sequence, axis=-1):
    """Concatenate arrays, tape variables or duals along ``axis`` (< 0)."""
    if axis >= 0:
        raise ValueError("use a negative axis")
    duals = [x for x in items if isinstance(x, Dual)]
    if duals:
        t = duals[0]
        vals = [x.val if isinstance(x, Dual) else x for x in items]
        epss = [x.eps if isinstance(x, Dual) else _zeros_like_tangent(t, x) for x in items]
        return Dual(concatenate(vals, axis), concatenate(epss, axis))
    vars_ = [x for x in items if isinstance(x, Var)]
    if not vars_:
        return np.concatenate([np.asarray(x, float) for x in items], axis=axis)
    tape = vars_[0].tape
    arrays = [x.value if isinstance(x, Var) else np.asarray(x, float) for x in items]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])
    parents, vjps = [], []
    for x, lo, hi in zip(items, bounds[:-1], bounds[1:]):
        if isinstance(x, Var):
            parents.append(x)
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(lo, hi)
            sl = tuple(sl)
            vjps.append(lambda g, sl=sl: g[sl])
    return tape.record(out, parents, vjps)


def stack(items: Sequence, axis=-1):
    """Stack along a new trailing axis (``axis`` must be -1)."""
    if axis != -1:
        raise ValueError("stack supports axis=-1 only")
    expanded = []
    for x in items:
        if isinstance(x, Dual):
            expanded.append(Dual(_expand_last(x.val), _expand_last(x.eps)))
        else:
            expanded.append(_expand_last(x))
    return concatenate(expanded, axis=-1)


def _expand_last(x):
    if isinstance(x, Dual):
        return Dual(_expand_last(x.val), _expand_last(x.eps))
    if isinstance(x, Var):
        return x.reshape(x.shape + (1,))
    return np.asarray(x, float)[..., None]


def scatter(matrix, x):
    """Apply a constant (sparse) matrix along the last axis: ``x @ matrix.T``.

    Used for deterministic scatter-add of element contributions into global
    vectors.
    """
    if isinstance(x, Var):
        xv = x.value
        out = np.asarray((matrix @ xv.reshape(-1, xv.shape[-1]).T).T).reshape(xv.shape[:-1] + (matrix.shape[0],))
        mt = matrix.T.tocsr() if hasattr(matrix, "tocsr") else matrix.T

        def vjp(g):
            g2 = np.reshape(g, (-1, g.shape[-1]))
            return np.asarray((mt @ g2.T).T).reshape(xv.shape)

        return x.tape.record(out, (x,), (vjp,))
    xv = np.asarray(x, float)
    return np.asarray((matrix @ xv.reshape(-1, xv.shape[-1]).T).T).reshape(xv.shape[:-1] + (matrix.shape[0],))


def einsum(subscripts: str, a, b):
    """Two-operand einsum with an explicit output; ``b`` may be constant."""
    ins, out = subscripts.split("->")
    sa, sb = ins.split(",")
    av = a.value if isinstance(a, Var) else np.asarray(a, float)
    bv = b.value if isinstance(b, Var) else np.asarray(b, float)
    res = np.einsum(subscripts, av, bv, optimize=True)
    if not isinstance(a, Var) and not isinstance(b, Var):
        return res
    for s_own, s_other in ((sa, sb), (sb, sa)):
        if any(c not in out and c not in s_other for c in s_own):
            raise NotImplementedError("index summed within one operand only")
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a)
        vjps.append(lambda g: np.einsum(f"{out},{sb}->{sa}", g, bv, optimize=True))
    if isinstance(b, Var):
        parents.append(b)
        vjps.append(lambda g: np.einsum(f"{out},{sa}->{sb}", g, av, optimize=True))
    tape = a.tape if isinstance(a, Var) else b.tape
    return tape.record(res, parents, vjps)


# drivers ---------------------------------------------------------------------


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")


def value_and_grad(f: Callable, inputs: Sequence):
    """Evaluate scalar ``f(*inputs)`` and its gradient by reverse accumulation.

    Returns ``(value, grads)`` with one gradient per input, shaped like the
    input.
    """
    tape = Tape()
    xs = [tape.variable(x) for x in inputs]
    out = f(*xs)
    if not isinstance(out, Var):
        v = float(np.asarray(out))
        _check_finite(v, "function value")
        return v, [np.zeros(np.shape(x)) for x in inputs]
    if out.value.size != 1:
        raise ValueError("function must be scalar-valued")
    _check_finite(out.value, "function value")
    adj = tape.backward(out)
    grads = []
    for x, xv in zip(xs, inputs):
        g = adj[x.index]
        g = np.zeros(np.shape(xv)) if g is None else np.asarray(g).reshape(np.shape(xv))
        _check_finite(g, "gradient")
        grads.append(float(g) if np.ndim(xv) == 0 else g)
    return float(out.value.reshape(())), grads


def grad(f: Callable, inputs: Sequence) -> list:
    """Gradient of a scalar-valued ``f`` with respect to each input."""
    return value_and_grad(f, inputs)[1]


def _eps_of(y):
    return y.eps if isinstance(y, Dual) else 0.0


def derivative(f: Callable, x: float) -> float:
    """First derivative of a scalar-to-scalar map (forward mode)."""
    y = f(Dual(np.float64(x), np.float64(1.0)))
    d = float(np.asarray(value(_eps_of(y))))
    _check_finite(d, "derivative")
    return d


def second_derivative(f: Callable, x: float) -> float:
    """Second derivative of a scalar-to-scalar map via nested duals."""
    one, zero = np.float64(1.0), np.float64(0.0)
    y = f(Dual(Dual(np.float64(x), one), Dual(one, zero)))
    e = _eps_of(y)
    d2 = float(np.asarray(value(_eps_of(e)))) if isinstance(e, Dual) else 0.0
    _check_finite(d2, "second derivative")
    return d2
