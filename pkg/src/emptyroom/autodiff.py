"""Reverse-mode automatic differentiation on a define-by-run tape.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient.  Outside a tape every op is a plain forward
evaluation, which is what inference uses.

    >>> x = Var(np.array([3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = x * x
    >>> backward(tape, y)
    >>> x.grad
    array([6.])
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, GraphError, NumericError, ShapeError

_ACTIVE: list["Tape"] = []
_tape_ids = itertools.count()


class Var:
    """A tensor value that may carry a gradient."""

    __array_priority__ = 100
    __slots__ = ("value", "grad", "requires_grad", "node_id", "name", "_tape")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        if isinstance(value, Var):
            value = value.value
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.name = name
        self._tape: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Var":
        return Var(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

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

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


@dataclass
class Node:
    op: str
    output: Var
    inputs: tuple[Var, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations.

    Recording order is a topological order, and :func:`backward` walks it in
    reverse.  Tapes nest; ops record on the innermost active one.
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, output: Var, inputs: tuple[Var, ...], fn) -> None:
        output.node_id = len(self.nodes)
        output._tape = self.id
        self.nodes.append(Node(op, output, inputs, fn))


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_var(x, dtype=None) -> Var:
    if isinstance(x, Var):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Var(arr)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def make_op(op: str, value: np.ndarray, inputs: Sequence[Var], backward_fn) -> Var:
    """Wrap ``value`` as the output of ``op`` and record it if needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input.
    """
    inputs = tuple(inputs)
    needs = any(v.requires_grad for v in inputs)
    out = Var(value, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, out, inputs, backward_fn)
    return out


def backward(tape: Tape, root: Var) -> None:
    """Accumulate d(root)/d(var) into ``var.grad`` for every reachable var."""
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root._tape != tape.id or root.node_id is None:
        raise GraphError("root is not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    owners: dict[int, Var] = {id(root): root}
    for node in reversed(tape.nodes[: root.node_id + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        _store(node.output, g)
        owners.pop(id(node.output), None)
        in_grads = node.backward_fn(g)
        for var, gi in zip(node.inputs, in_grads):
            if gi is None or not var.requires_grad:
                continue
            key = id(var)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = var
    # leaves: vars never produced on this tape
    for key, g in grads.items():
        _store(owners[key], g)


def _store(var: Var, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=var.value.dtype).reshape(var.shape)
    var.grad = g.copy() if var.grad is None else var.grad + g


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return make_op("add", a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return make_op("sub", a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return make_op("mul", av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * av, b.shape) if b.requires_grad else None))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    out = av / bv
    return make_op("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bv, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / bv, b.shape) if b.requires_grad else None))


def neg(a) -> Var:
    a = as_var(a)
    return make_op("neg", -a.value, (a,), lambda g: (-g,))


def pow_scalar(a, p: float) -> Var:
    a = as_var(a)
    av = a.value
    return make_op("pow", av ** p, (a,), lambda g: (g * p * av ** (p - 1),))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return make_op("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    av = a.value
    return make_op("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return make_op("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def abs_(a) -> Var:
    """|a| with subgradient 0 at 0."""
    a = as_var(a)
    s = np.sign(a.value)
    return make_op("abs", np.abs(a.value), (a,), lambda g: (g * s,))


def relu(a) -> Var:
    a = as_var(a)
    pos = a.value > 0
    return make_op("relu", np.where(pos, a.value, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Var:
    a = as_var(a)
    scale = np.where(a.value > 0, 1.0, slope).astype(a.dtype)
    return make_op("leaky_relu", a.value * scale, (a,), lambda g: (g * scale,))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return make_op("tanh", out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = 0.5 * (np.tanh(0.5 * a.value) + 1)
    return make_op("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.value.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_op("sum", np.asarray(out), (a,), fn)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return make_op("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Var:
    a = as_var(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op("transpose", a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(vars_: Sequence, axis: int = 0) -> Var:
    vs = [as_var(v) for v in vars_]
    sizes = [v.shape[axis] for v in vs]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_op("concat", np.concatenate([v.value for v in vs], axis=axis), vs, fn)


def getitem(a, idx) -> Var:
    a = as_var(a)
    shape, dtype = a.shape, a.dtype

    def fn(g):
        gx = np.zeros(shape, dtype=dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return make_op("getitem", a.value[idx], (a,), fn)


def matmul(a, b) -> Var:
    """Batched matrix product following ``numpy.matmul`` for rank >= 2."""
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return make_op("matmul", av @ bv, (a, b), fn)


def softmax(a, axis: int = 1) -> Var:
    a = as_var(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", out, (a,), fn)


def log_softmax(a, axis: int = 1) -> Var:
    a = as_var(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return make_op("log_softmax", out, (a,), fn)


def where_mask(mask: np.ndarray, a, b) -> Var:
    """``mask ? a : b`` for a constant mask."""
    a, b = as_var(a), as_var(b)
    m = np.asarray(mask, dtype=bool)
    return make_op("where", np.where(m, a.value, b.value), (a, b),
                   lambda g: (_unbroadcast(np.where(m, g, 0), a.shape) if a.requires_grad else None,
                              _unbroadcast(np.where(m, 0, g), b.shape) if b.requires_grad else None))


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    tol: float
    per_input: list[float] = field(default_factory=list)
    n_checked: int = 0
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<22}{self.max_rel_error:>14.3e}{self.tol:>10.0e}"
                f"{self.n_checked:>9}  {status}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(
    f: Callable[..., Var],
    inputs: Sequence[Var],
    eps: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
    skip: Callable[[int, np.ndarray], np.ndarray] | None = None,
    wrt: Sequence[int] | None = None,
) -> GradcheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    ``skip(i, value)`` may return a boolean mask of elements of input ``i`` to
    leave out (points within reach of a kink).  Inputs must be float64.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    inputs = [as_var(x) for x in inputs]
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    for i in wrt:
        if inputs[i].dtype != np.float64:
            raise ContractError("gradcheck requires float64 inputs")
        inputs[i].requires_grad = True
        inputs[i].grad = None

    def evaluate() -> float:
        val = f(*inputs).value
        if val.size != 1:
            raise ContractError("gradcheck function must return a scalar")
        val = float(val.reshape(()))
        if not np.isfinite(val):
            raise NumericError(f"{name}: non-finite function value")
        return val

    with Tape() as tape:
        out = f(*inputs)
    if not np.all(np.isfinite(out.value)):
        raise NumericError(f"{name}: non-finite function value")
    backward(tape, out)

    report = GradcheckReport(name=name, max_rel_error=0.0, tol=tol)
    for i in wrt:
        var = inputs[i]
        analytic = np.zeros_like(var.value) if var.grad is None else var.grad
        flat = var.value.reshape(-1)
        skipped = np.zeros(flat.size, bool) if skip is None else np.asarray(skip(i, var.value)).reshape(-1)
        numeric = np.zeros(flat.size)
        for k in range(flat.size):
            if skipped[k]:
                continue
            orig = flat[k]
            flat[k] = orig + eps
            fp = evaluate()
            flat[k] = orig - eps
            fm = evaluate()
            flat[k] = orig
            numeric[k] = (fp - fm) / (2 * eps)
        err = relative_error(analytic.reshape(-1), numeric)[~skipped]
        worst = float(err.max()) if err.size else 0.0
        report.per_input.append(worst)
        report.max_rel_error = max(report.max_rel_error, worst)
        report.n_checked += int((~skipped).sum())
        report.n_skipped += int(skipped.sum())
    return report
