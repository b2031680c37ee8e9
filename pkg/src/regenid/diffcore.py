"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Node` wraps a value of rank <= 2 together with the closure that
maps its output gradient to gradients of its parents. Graphs are built fresh
for every training step; learnable arrays live outside the graph and are bound
with :func:`param`.

Broadcasting is deliberately restricted: elementwise binary ops accept equal
shapes, or a rank-0 operand against an array. The one exception is
:func:`linear`, whose bias is added to every row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Node", "const", "param", "add", "sub", "mul", "neg", "matmul", "transpose",
    "linear", "concat", "slice_", "sum_", "mean", "square", "exp", "log", "tanh",
    "sigmoid", "softplus", "relu", "clip", "backward", "gradient_check",
    "GradCheckReport",
]


class Node:
    """Value in a computation graph.

    Parameters
    ----------
    value : array_like
        Stored as a float64 array of rank <= 2.
    requires_grad : bool
        Leaves with this flag receive accumulated gradients in ``grad``.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf",
                 name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(op, value.shape, detail="rank must be <= 2")
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(value) if self.requires_grad else None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.value.shape})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def const(value) -> Node:
    return Node(value, requires_grad=False, op="const")


def param(value, name=None) -> Node:
    """Bind an external array into the graph as a trainable leaf."""
    return Node(value, requires_grad=True, op="param", name=name)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _result(value, parents, backward_fn, op) -> Node:
    needs = any(p.requires_grad for p in parents)
    node = Node(value, requires_grad=False, parents=parents if needs else (),
                backward_fn=backward_fn if needs else None, op=op)
    node.requires_grad = needs
    return node


def _check_elementwise(op, a: Node, b: Node):
    if a.shape == b.shape or a.value.ndim == 0 or b.value.ndim == 0:
        return
    raise ShapeError(op, a.shape, b.shape, detail="only scalar-array broadcasting is allowed")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    # a rank-0 operand collects the total
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_elementwise("add", a, b)
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_elementwise("sub", a, b)
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_elementwise("mul", a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
                   "mul")


def neg(a) -> Node:
    a = _as_node(a)
    return _result(-a.value, (a,), lambda g: (-g,), "neg")


def square(a) -> Node:
    a = _as_node(a)
    av = a.value
    return _result(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def exp(a) -> Node:
    a = _as_node(a)
    out = np.exp(a.value)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Node:
    a = _as_node(a)
    av = a.value
    return _result(np.log(av), (a,), lambda g: (g / av,), "log")


def tanh(a) -> Node:
    a = _as_node(a)
    out = np.tanh(a.value)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Node:
    a = _as_node(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Node:
    a = _as_node(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    return _result(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * av)),), "softplus")


def relu(a) -> Node:
    a = _as_node(a)
    mask = a.value > 0.0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def clip(a, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; gradient passes where ``lo <= a <= hi``."""
    a = _as_node(a)
    av = a.value
    mask = (av >= lo) & (av <= hi)
    return _result(np.clip(av, lo, hi), (a,), lambda g: (g * mask,), "clip")


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")

    def bw(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:  # (k,) @ (k, n) -> (n,)
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:  # (m, k) @ (k,) -> (m,)
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), bw, "matmul")


def transpose(a) -> Node:
    a = _as_node(a)
    return _result(a.value.T, (a,), lambda g: (g.T,), "transpose")


def linear(x, W, b=None) -> Node:
    """Affine map ``x @ W.T + b`` with ``W`` stored (out x in).

    ``x`` may be a single vector ``(in,)`` or a batch of rows ``(n, in)``; the
    bias is added to every row.
    """
    x, W = _as_node(x), _as_node(W)
    xv, Wv = x.value, W.value
    if Wv.ndim != 2 or xv.ndim == 0 or xv.shape[-1] != Wv.shape[1]:
        raise ShapeError("linear", x.shape, W.shape, detail="input dim must equal W columns")
    out = xv @ Wv.T
    parents = [x, W]
    if b is not None:
        b = _as_node(b)
        if b.shape != (Wv.shape[0],):
            raise ShapeError("linear", W.shape, b.shape, detail="bias length must equal W rows")
        out = out + b.value
        parents.append(b)

    def bw(g):
        if xv.ndim == 1:
            grads = [g @ Wv, np.outer(g, xv)]
            if b is not None:
                grads.append(g)
        else:
            grads = [g @ Wv, g.T @ xv]
            if b is not None:
                grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(out, tuple(parents), bw, "linear")


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [_as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat", (), detail="nothing to concatenate")
    vals = [n.value for n in nodes]
    ndim = vals[0].ndim
    ax = axis % max(ndim, 1)
    for v in vals[1:]:
        if v.ndim != ndim or any(v.shape[i] != vals[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError("concat", vals[0].shape, v.shape)
    sizes = np.cumsum([v.shape[ax] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _result(np.concatenate(vals, axis=ax), tuple(nodes), bw, "concat")


def slice_(a, idx) -> Node:
    """Basic (view) indexing; advanced indexing is not supported."""
    a = _as_node(a)
    out = a.value[idx]

    def bw(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        return (full,)

    return _result(out, (a,), bw, "slice")


def sum_(a, axis=None) -> Node:
    a = _as_node(a)
    av = a.value
    out = av.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.full_like(av, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return _result(out, (a,), bw, "sum")


def mean(a, axis=None) -> Node:
    a = _as_node(a)
    av = a.value
    n = av.size if axis is None else av.shape[axis]
    out = av.mean(axis=axis)

    def bw(g):
        if axis is None:
            return (np.full_like(av, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, av.shape).copy(),)

    return _result(out, (a,), bw, "mean")


def custom(value, parents: Sequence[Node], backward_fn: Callable, op: str) -> Node:
    """Register an op whose backward rule is supplied by the caller.

    ``backward_fn(g)`` must return one gradient (or ``None``) per parent.
    """
    return _result(value, tuple(parents), backward_fn, op)


# ---------------------------------------------------------------- backward

def _topo_order(root: Node):
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate ``d loss / d node`` into ``grad`` of every reachable leaf.

    Intermediate gradients are local to this call, so repeated calls add up
    exactly like repeated losses would.
    """
    if loss.value.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = node.grad + g if node.grad is not None else np.array(g, dtype=np.float64)
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- checking

@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error of analytic vs central-difference gradients."""

    errors: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        return f"gradient check {status} (tol={self.tol:g})\n  " + "\n  ".join(lines)


def gradient_check(f: Callable[[Sequence[Node]], Node], params: Iterable, step: float = 1e-5,
                   tol: float = 1e-4, abs_floor: float = 1e-6, names=None) -> GradCheckReport:
    """Compare ``backward`` against central differences for every parameter entry.

    Parameters
    ----------
    f : callable
        Builds a scalar loss from a list of parameter nodes. Must be
        deterministic.
    params : iterable of array_like or Node
        Base values; perturbed copies are bound on every evaluation.
    step : float
        Central-difference half step.
    tol : float
        Pass threshold on the relative error (strict ``<``).
    abs_floor : float
        Floor on the denominator ``max(|analytic|, |numeric|)`` so entries that
        are zero both ways are compared absolutely.
    """
    base = [np.array(p.value if isinstance(p, Node) else p, dtype=np.float64) for p in params]
    if names is None:
        names = [getattr(p, "name", None) or f"param{i}" for i, p in enumerate(params)]

    def evaluate(values):
        nodes = [param(v) for v in values]
        out = f(nodes)
        return out, nodes

    out, nodes = evaluate(base)
    if not np.all(np.isfinite(out.value)):
        raise NonFiniteError("gradient_check: non-finite loss at base point")
    backward(out)
    report = GradCheckReport(tol=tol)
    for i, (name, node) in enumerate(zip(names, nodes)):
        analytic = node.grad
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"gradient_check: non-finite analytic gradient for {name}")
        numeric = np.zeros_like(base[i])
        flat = numeric.reshape(-1)
        for j in range(base[i].size):
            vals = [b.copy() for b in base]
            vals[i].reshape(-1)[j] += step
            fp = float(f([const(v) for v in vals]).value)
            vals[i].reshape(-1)[j] -= 2.0 * step
            fm = float(f([const(v) for v in vals]).value)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"gradient_check: non-finite loss perturbing {name}[{j}]")
            flat[j] = (fp - fm) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
        err = np.abs(analytic - numeric) / denom
        report.errors[name] = float(err.max()) if err.size else 0.0
    return report
