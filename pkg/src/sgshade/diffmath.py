"""Reverse-mode automatic differentiation over a flat, append-only tape.

The expression graph is scalar-structured: one node per logical scalar
quantity in the shading math. Node values are numpy arrays of arbitrary
shape, so the same graph evaluated with batched leaf values (one entry per
ray) computes every ray in a single pass. Gradients of broadcast operands
are reduced back to the operand's own shape, which is how per-ray
contributions accumulate into shape-() or shape-(k,) parameters.

A ``DiffValue`` either references a tape node or is a free constant
(``tape is None``). Arithmetic between constants stays eager numpy and
never touches a tape. Every dispatch helper (``exp``, ``clamp``, ...) also
accepts plain arrays, so numeric kernels written against this module run
unchanged in forward-only mode.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Tape",
    "DiffValue",
    "backward",
    "value_of",
    "exp",
    "log",
    "sqrt",
    "expm1",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "softplus",
    "clamp",
    "maximum",
    "matmul",
    "vsum",
    "column",
    "take_rows",
    "scatter_rows",
    "stack_values",
    "reshape",
    "transpose2d",
    "dot",
    "norm",
    "normalize",
]

NORM_EPS = 1e-12  # guard added inside every vector norm


class DomainError(ValueError):
    """An operation was evaluated outside its domain.

    Carries the offending operation name in ``op``.
    """

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Append-only record of differentiable operations.

    Nodes only ever reference lower-indexed nodes, so a single reverse
    sweep visits them in a valid topological order. ``backward`` never
    mutates the tape; repeated sweeps give identical results.
    """

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Callable | None] = []
        self.param_slots: list[int] = []
        self._param_values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._parents)

    @property
    def num_parameters(self) -> int:
        return len(self.param_slots)

    def lift(self, x, trainable: bool = False) -> "DiffValue":
        """Enter a value into the graph.

        Trainable leaves get a parameter slot and receive one gradient
        each from ``backward``; everything else is a free constant.
        """
        value = _asarray(x)
        if not np.all(np.isfinite(value)):
            raise DomainError("lift", "non-finite input value")
        if not trainable:
            return DiffValue(value, None, None)
        node = self._append(value, (), None)
        self.param_slots.append(node)
        self._param_values.append(value)
        return DiffValue(value, self, node)

    def _append(self, value: np.ndarray, parents: tuple[int, ...],
                vjp: Callable | None) -> int:
        self._parents.append(parents)
        self._vjps.append(vjp)
        return len(self._parents) - 1

    def backward(self, output: "DiffValue", seed=None) -> list[np.ndarray]:
        return backward(self, output, seed)


class DiffValue:
    """A differentiable value: numpy payload plus an optional tape node."""

    __slots__ = ("value", "tape", "node")
    # Keep numpy from absorbing us into object arrays; binary ops with
    # ndarrays must fall through to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: Tape | None, node: int | None):
        self.value = value
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        kind = "const" if self.node is None else f"node {self.node}"
        return f"DiffValue({self.value!r}, {kind})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return _binary("add", self, other,
                       lambda a, b: a + b,
                       lambda g, a, b: g,
                       lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary("sub", self, other,
                       lambda a, b: a - b,
                       lambda g, a, b: g,
                       lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary("sub", other, self,
                       lambda a, b: a - b,
                       lambda g, a, b: g,
                       lambda g, a, b: -g)

    def __mul__(self, other):
        return _binary("mul", self, other,
                       lambda a, b: a * b,
                       lambda g, a, b: g * b,
                       lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __pow__(self, exponent):
        if isinstance(exponent, DiffValue):
            raise DomainError("pow", "only constant exponents are supported")
        return _pow(self, float(exponent))

    def __neg__(self):
        return _unary("neg", self, lambda a: -a, lambda g, a, y: -g)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def value_of(x) -> np.ndarray:
    """Raw numpy payload of a DiffValue, or the input coerced to float64."""
    if isinstance(x, DiffValue):
        return x.value
    return _asarray(x)


def _tape_of(*operands) -> Tape | None:
    tape = None
    for op in operands:
        if isinstance(op, DiffValue) and op.tape is not None:
            if tape is None:
                tape = op.tape
            elif tape is not op.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _record(tape: Tape | None, value: np.ndarray,
            parents: list[tuple[int, Callable]]):
    """Create the result node; plain numpy when nothing is tracked."""
    if tape is None or not parents:
        return value
    idx = tuple(p for p, _ in parents)
    fns = tuple(f for _, f in parents)

    def vjp(g):
        return tuple(f(g) for f in fns)

    node = tape._append(value, idx, vjp)
    return DiffValue(value, tape, node)


def _binary(name, a, b, fwd, dfda, dfdb):
    av, bv = value_of(a), value_of(b)
    out = fwd(av, bv)
    tape = _tape_of(a, b)
    parents = []
    if isinstance(a, DiffValue) and a.node is not None:
        parents.append((a.node,
                        lambda g, sh=av.shape: _unbroadcast(dfda(g, av, bv), sh)))
    if isinstance(b, DiffValue) and b.node is not None:
        parents.append((b.node,
                        lambda g, sh=bv.shape: _unbroadcast(dfdb(g, av, bv), sh)))
    return _record(tape, out, parents)


def _unary(name, x, fwd, dfdx, domain_check=None):
    if not isinstance(x, DiffValue):
        xv = _asarray(x)
        if domain_check is not None:
            domain_check(name, xv)
        return fwd(xv)
    xv = x.value
    if domain_check is not None:
        domain_check(name, xv)
    out = fwd(xv)
    parents = []
    if x.node is not None:
        parents.append((x.node, lambda g: _unbroadcast(dfdx(g, xv, out), xv.shape)))
    return _record(x.tape, out, parents)


def _div(a, b):
    bv = value_of(b)
    if np.any(bv == 0.0):
        raise DomainError("div", "division by zero")
    return _binary("div", a, b,
                   lambda x, y: x / y,
                   lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y))


def _pow(x, p: float):
    def check(name, v):
        if p != int(p) and np.any(v < 0.0):
            raise DomainError("pow", "negative base with non-integer exponent")
        if p < 0 and np.any(v == 0.0):
            raise DomainError("pow", "zero base with negative exponent")

    return _unary("pow", x,
                  lambda v: v ** p,
                  lambda g, v, y: g * p * v ** (p - 1.0),
                  domain_check=check)


# -- elementwise functions ------------------------------------------------

def exp(x):
    return _unary("exp", x, np.exp, lambda g, v, y: g * y)


def log(x):
    def check(name, v):
        if np.any(v <= 0.0):
            raise DomainError("log", "non-positive argument")
    return _unary("log", x, np.log, lambda g, v, y: g / v, domain_check=check)


def sqrt(x):
    def check(name, v):
        if np.any(v < 0.0):
            raise DomainError("sqrt", "negative argument")
    return _unary("sqrt", x, np.sqrt, lambda g, v, y: g * 0.5 / y,
                  domain_check=check)


def expm1(x):
    return _unary("expm1", x, np.expm1, lambda g, v, y: g * np.exp(v))


def sin(x):
    return _unary("sin", x, np.sin, lambda g, v, y: g * np.cos(v))


def cos(x):
    return _unary("cos", x, np.cos, lambda g, v, y: -g * np.sin(v))


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda g, v, y: g * (1.0 - y * y))


def _sigmoid_np(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    return _unary("sigmoid", x,
                  lambda v: _sigmoid_np(np.atleast_1d(v)).reshape(np.shape(v)),
                  lambda g, v, y: g * y * (1.0 - y))


def softplus(x):
    return _unary("softplus", x,
                  lambda v: np.logaddexp(0.0, v),
                  lambda g, v, y: g * _sigmoid_np(np.atleast_1d(v)).reshape(np.shape(v)))


def clamp(x, lo: float, hi: float):
    """Clip to [lo, hi]; the subgradient is zero outside (lo, hi) and at
    the boundaries themselves."""
    def grad(g, v, y):
        return g * ((v > lo) & (v < hi))
    return _unary("clamp", x, lambda v: np.clip(v, lo, hi), grad)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    return _binary("max", a, b,
                   np.maximum,
                   lambda g, x, y: g * (x >= y),
                   lambda g, x, y: g * (x < y))


# -- structural operations -------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise DomainError("matmul", "only 2-D operands are supported")
    out = av @ bv
    tape = _tape_of(a, b)
    parents = []
    if isinstance(a, DiffValue) and a.node is not None:
        parents.append((a.node, lambda g: g @ bv.T))
    if isinstance(b, DiffValue) and b.node is not None:
        parents.append((b.node, lambda g: av.T @ g))
    return _record(tape, out, parents)


def vsum(x, axis=None, keepdims: bool = False):
    """Summation; the gradient broadcasts back over the summed axes."""
    if not isinstance(x, DiffValue):
        return np.sum(value_of(x), axis=axis, keepdims=keepdims)
    xv = x.value
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    parents = [] if x.node is None else [(x.node, back)]
    return _record(x.tape, out, parents)


def column(x, j: int):
    """Select column ``j`` of a 2-D value as a 1-D value."""
    if not isinstance(x, DiffValue):
        return value_of(x)[:, j]
    xv = x.value

    def back(g):
        z = np.zeros_like(xv)
        z[:, j] = g
        return z

    parents = [] if x.node is None else [(x.node, back)]
    return _record(x.tape, xv[:, j], parents)


def take_rows(x, idx: np.ndarray):
    """Gather rows ``x[idx]``; repeated indices scatter-add on backward."""
    idx = np.asarray(idx, dtype=np.intp)
    if not isinstance(x, DiffValue):
        return value_of(x)[idx]
    xv = x.value

    def back(g):
        z = np.zeros_like(xv)
        np.add.at(z, idx, g)
        return z

    parents = [] if x.node is None else [(x.node, back)]
    return _record(x.tape, xv[idx], parents)


def scatter_rows(values, idx: np.ndarray, num_rows: int, fill):
    """Place rows at ``idx`` of a fresh (num_rows, ...) array filled with
    the constant ``fill``. Indices must be unique."""
    idx = np.asarray(idx, dtype=np.intp)
    vv = value_of(values)
    out = np.empty((num_rows,) + vv.shape[1:], dtype=np.float64)
    out[:] = fill
    out[idx] = vv
    if not isinstance(values, DiffValue) or values.node is None:
        return out
    parents = [(values.node, lambda g: g[idx])]
    return _record(values.tape, out, parents)


def stack_values(items: Sequence):
    """Stack along a new leading axis; mixed constants are allowed."""
    vals = [value_of(it) for it in items]
    out = np.stack(vals, axis=0)
    tape = _tape_of(*items)
    parents = []
    for i, it in enumerate(items):
        if isinstance(it, DiffValue) and it.node is not None:
            parents.append((it.node, lambda g, i=i: g[i]))
    return _record(tape, out, parents)


def reshape(x, shape):
    if not isinstance(x, DiffValue):
        return value_of(x).reshape(shape)
    xv = x.value
    parents = []
    if x.node is not None:
        parents.append((x.node, lambda g: g.reshape(xv.shape)))
    return _record(x.tape, xv.reshape(shape), parents)


def transpose2d(x):
    if not isinstance(x, DiffValue):
        return value_of(x).T
    parents = []
    if x.node is not None:
        parents.append((x.node, lambda g: g.T))
    return _record(x.tape, x.value.T, parents)


# -- small-vector helpers ---------------------------------------------------

def dot(u, v):
    """Inner product of two 3-component sequences (scalars may be batched)."""
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def norm(v):
    """Guarded Euclidean norm of a 3-component sequence."""
    return sqrt(dot(v, v) + NORM_EPS * NORM_EPS)


def normalize(v):
    """Guarded normalization of a 3-component sequence."""
    n = norm(v)
    return [v[0] / n, v[1] / n, v[2] / n]


# -- reverse sweep -----------------------------------------------------------

def backward(tape: Tape, output: DiffValue, seed=None) -> list[np.ndarray]:
    """Accumulate d(output)/d(parameter) for every parameter slot.

    ``seed`` is the upstream gradient of ``output`` (defaults to ones,
    i.e. the gradient of ``sum(output)``). The tape is read-only during
    the sweep, so calling backward twice gives identical results.
    """
    if not isinstance(output, DiffValue):
        raise ValueError("backward expects a DiffValue output")
    if output.tape is not None and output.tape is not tape:
        raise ValueError("output does not belong to this tape")

    zeros = [np.zeros_like(v) for v in tape._param_values]
    if output.tape is None:
        return zeros  # constant output: no dependence on any parameter

    if seed is None:
        seed = np.ones_like(output.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise ValueError(
                f"seed shape {seed.shape} does not match output "
                f"shape {output.value.shape}")

    grads: list[np.ndarray | None] = [None] * len(tape)
    grads[output.node] = seed
    vjps = tape._vjps
    all_parents = tape._parents
    for i in range(output.node, -1, -1):
        g = grads[i]
        if g is None or vjps[i] is None:
            continue
        for parent, pg in zip(all_parents[i], vjps[i](g)):
            if grads[parent] is None:
                grads[parent] = np.array(pg, dtype=np.float64, copy=True)
            else:
                grads[parent] = grads[parent] + pg

    out = []
    for slot, z in zip(tape.param_slots, zeros):
        g = grads[slot]
        out.append(z if g is None else np.asarray(g, dtype=np.float64))
    return out
