"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is an append-only tape. Every primitive applied to a tensor
that lives on a graph appends one node holding the primitive kind, the ids of
its parents and the forward values it needs for the adjoint. Adjoints are
themselves written with the same primitives, so ``backward(..., record=True)``
leaves a differentiable trace on the tape and a second backward pass yields
exact second-order gradients (double backprop).

    g = Graph()
    x = g.variable([3.0])
    y = square(x).sum()
    (dx,) = g.grad(y, [x], record=True)   # 6
    (ddx,) = g.grad(dx.sum(), [x])        # 2
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ContractError(ValueError):
    """An operation received inputs that violate its shape/usage contract."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "recording", True)


@contextmanager
def no_record():
    """Evaluate primitives without appending anything to any graph."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


class Tensor:
    """A float64 array, optionally bound to a node of a :class:`Graph`."""

    __slots__ = ("data", "graph", "id")
    __array_priority__ = 100

    def __init__(self, data, graph: "Graph | None" = None, id: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.id = id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.id}" if self.id is not None else ""
        return f"Tensor({self.data!r}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(slots=True)
class Node:
    kind: str
    parents: tuple
    inputs: tuple
    attrs: dict
    out: Tensor | None = None


@dataclass
class Graph:
    """Append-only tape. Node ids are positions; parents always precede children."""

    nodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    def variable(self, value) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), self, len(self.nodes))
        _check_finite("variable", t.data)
        self.nodes.append(Node("leaf", (), (), {}, t))
        return t

    def _append(self, kind, inputs, attrs, value) -> Tensor:
        parents = tuple(t.id for t in inputs if t.graph is self and t.id is not None)
        out = Tensor(value, self, len(self.nodes))
        self.nodes.append(Node(kind, parents, inputs, attrs, out))
        return out

    def replay(self, leaves: dict | None = None) -> list[np.ndarray]:
        """Recompute every node value from leaf values (optionally overridden)."""
        vals: list[np.ndarray] = []
        leaves = leaves or {}
        with no_record():
            for i, node in enumerate(self.nodes):
                if node.kind == "leaf":
                    vals.append(np.asarray(leaves.get(i, node.out.data), dtype=np.float64))
                    continue
                args = [vals[t.id] if (t.graph is self and t.id is not None) else t.data
                        for t in node.inputs]
                vals.append(_PRIMS[node.kind].forward(*args, **node.attrs))
        return vals

    def backward(self, output: Tensor, wrt: Sequence, record: bool = False) -> dict:
        """Gradients of scalar ``output`` w.r.t. the tensors (or node ids) in ``wrt``.

        Returns a mapping from node id to a tensor shaped like that node. With
        ``record`` set the adjoint computation is appended to this graph, so
        the returned tensors can be differentiated again.
        """
        if not isinstance(output, Tensor) or output.graph is not self:
            raise ContractError("output is not a node of this graph")
        if output.size != 1:
            raise ContractError(f"output must be scalar, got shape {output.shape}")
        ids = []
        for w in wrt:
            i = w.id if isinstance(w, Tensor) else int(w)
            if isinstance(w, Tensor) and w.graph is not self:
                raise ContractError("wrt tensor is not on this graph")
            if i is None or not 0 <= i < len(self.nodes):
                raise ContractError(f"wrt id {i} is not on this graph")
            ids.append(i)

        top = output.id
        # only nodes lying on a path from some wrt id to the output matter
        reach = np.zeros(top + 1, dtype=bool)
        for i in ids:
            if i <= top:
                reach[i] = True
        for i in range(min(ids, default=top + 1), top + 1):
            if not reach[i]:
                ps = self.nodes[i].parents
                reach[i] = any(reach[p] for p in ps)

        adj: dict[int, Tensor] = {}
        if reach[top]:
            adj[top] = Tensor(np.ones_like(output.data))
        ctx = _null() if record else no_record()
        with ctx:
            for i in range(top, -1, -1):
                g = adj.get(i)
                if g is None or not reach[i]:
                    continue
                node = self.nodes[i]
                if node.kind == "leaf":
                    continue
                mask = [t.graph is self and t.id is not None and reach[t.id]
                        for t in node.inputs]
                if not any(mask):
                    continue
                grads = _PRIMS[node.kind].vjp(g, node.out, mask, *node.inputs, **node.attrs)
                for t, m, gi in zip(node.inputs, mask, grads):
                    if not m or gi is None:
                        continue
                    prev = adj.get(t.id)
                    adj[t.id] = gi if prev is None else add(prev, gi)
        result = {}
        for i in ids:
            g = adj.get(i)
            result[i] = g if g is not None else Tensor(np.zeros_like(self.nodes[i].out.data))
        return result

    def grad(self, output: Tensor, wrt: Sequence[Tensor], record: bool = False) -> list[Tensor]:
        gm = self.backward(output, wrt, record=record)
        return [gm[w.id] for w in wrt]


@contextmanager
def _null():
    prev = _recording()
    _state.recording = True
    try:
        yield
    finally:
        _state.recording = prev


def _check_finite(kind, value):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"primitive '{kind}' produced non-finite values")


@dataclass(frozen=True)
class Primitive:
    kind: str
    forward: Callable
    vjp: Callable
    public: bool = True


_PRIMS: dict[str, Primitive] = {}


def _register(kind, forward, vjp, public=True):
    _PRIMS[kind] = Primitive(kind, forward, vjp, public)


def apply_primitive(kind: str, *inputs, **attrs) -> Tensor:
    """Evaluate primitive ``kind`` and record it when any input is on a graph."""
    prim = _PRIMS.get(kind)
    if prim is None:
        raise ContractError(f"unknown primitive '{kind}'")
    ts = tuple(as_tensor(x) for x in inputs)
    graph = None
    for t in ts:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ContractError(f"'{kind}' mixes tensors from different graphs")
            graph = t.graph
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value = prim.forward(*(t.data for t in ts), **attrs)
    except ValueError as exc:
        raise ContractError(f"'{kind}': {exc}") from None
    _check_finite(kind, value)
    if graph is not None and _recording():
        return graph._append(kind, ts, attrs, value)
    return Tensor(value)


def primitive_kinds(public_only: bool = True) -> list[str]:
    return [k for k, p in _PRIMS.items() if p.public or not public_only]


# ---------------------------------------------------------------- helpers

def _unbroadcast_shape(g: Tensor, shape) -> Tensor:
    if g.shape == tuple(shape):
        return g
    return apply_primitive("sum_to", g, shape=tuple(shape))


def _expand(g: Tensor, in_shape, axis, keepdims) -> Tensor:
    """Undo a reduction: reshape ``g`` to keep reduced axes, then broadcast."""
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(in_shape) for a in axes)
        kshape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))
        g = reshape(g, kshape)
    elif axis is None:
        g = reshape(g, (1,) * len(in_shape))
    return apply_primitive("broadcast_to", g, shape=tuple(in_shape))


def _same_shape(a, b, kind):
    if a.shape != b.shape:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ValueError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ------------------------------------------------------------- primitives

def _fw_add(a, b):
    _same_shape(a, b, "add")
    return a + b


def _vjp_add(g, out, mask, a, b):
    return (_unbroadcast_shape(g, a.shape) if mask[0] else None,
            _unbroadcast_shape(g, b.shape) if mask[1] else None)


def _fw_sub(a, b):
    _same_shape(a, b, "subtract")
    return a - b


def _vjp_sub(g, out, mask, a, b):
    return (_unbroadcast_shape(g, a.shape) if mask[0] else None,
            _unbroadcast_shape(scale(g, -1.0), b.shape) if mask[1] else None)


def _fw_mul(a, b):
    _same_shape(a, b, "multiply")
    return a * b


def _vjp_mul(g, out, mask, a, b):
    return (_unbroadcast_shape(mul(g, b), a.shape) if mask[0] else None,
            _unbroadcast_shape(mul(g, a), b.shape) if mask[1] else None)


def _fw_div(a, b):
    _same_shape(a, b, "divide")
    return a / b


def _vjp_div(g, out, mask, a, b):
    ga = _unbroadcast_shape(div(g, b), a.shape) if mask[0] else None
    gb = None
    if mask[1]:
        gb = _unbroadcast_shape(scale(div(mul(g, div(a, b)), b), -1.0), b.shape)
    return ga, gb


def _fw_scale(a, c):
    return a * c


def _vjp_scale(g, out, mask, a, c):
    return (scale(g, c),)


def _fw_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot matmul {a.shape} by {b.shape}")
    return a @ b


def _vjp_matmul(g, out, mask, a, b):
    return (matmul(g, transpose(b)) if mask[0] else None,
            matmul(transpose(a), g) if mask[1] else None)


def _fw_affine(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"affine needs x (B,I), W (O,I), b (O,); got {x.shape}, {w.shape}, {b.shape}")
    return x @ w.T + b


def _vjp_affine(g, out, mask, x, w, b):
    return (matmul(g, w) if mask[0] else None,
            matmul(transpose(g), x) if mask[1] else None,
            apply_primitive("sum_to", g, shape=b.shape) if mask[2] else None)


def _fw_transpose(a):
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got {a.shape}")
    return np.ascontiguousarray(a.T)


def _vjp_transpose(g, out, mask, a):
    return (transpose(g),)


def _fw_reshape(a, shape):
    return a.reshape(shape)


def _vjp_reshape(g, out, mask, a, shape):
    return (reshape(g, a.shape),)


def _fw_sum_to(a, shape):
    nlead = a.ndim - len(shape)
    axes = tuple(range(nlead)) + tuple(
        i + nlead for i, n in enumerate(shape) if n == 1 and a.shape[i + nlead] != 1)
    r = a.sum(axis=axes, keepdims=True) if axes else a
    return r.reshape(shape)


def _vjp_sum_to(g, out, mask, a, shape):
    return (apply_primitive("broadcast_to", g, shape=a.shape),)


def _fw_broadcast_to(a, shape):
    return np.broadcast_to(a, shape).copy()


def _vjp_broadcast_to(g, out, mask, a, shape):
    return (apply_primitive("sum_to", g, shape=a.shape),)


def _fw_relu(a):
    return np.maximum(a, 0.0)


def _vjp_relu(g, out, mask, a):
    return (mul(g, Tensor((a.data > 0).astype(np.float64))),)


def _fw_softplus(a):
    return np.logaddexp(0.0, a)


def _vjp_softplus(g, out, mask, a):
    return (mul(g, apply_primitive("sigmoid", a)),)


def _fw_sigmoid(a):
    return np.exp(-np.logaddexp(0.0, -a))


def _vjp_sigmoid(g, out, mask, a):
    s = apply_primitive("sigmoid", a)
    return (mul(g, mul(s, sub(1.0, s))),)


def _fw_square(a):
    return a * a


def _vjp_square(g, out, mask, a):
    return (scale(mul(g, a), 2.0),)


def _fw_sum(a, axis=None, keepdims=False):
    return np.asarray(a.sum(axis=axis, keepdims=keepdims))


def _vjp_sum(g, out, mask, a, axis=None, keepdims=False):
    return (_expand(g, a.shape, axis, keepdims),)


def _count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[i] for i in axes]))


def _fw_mean(a, axis=None, keepdims=False):
    return np.asarray(a.mean(axis=axis, keepdims=keepdims))


def _vjp_mean(g, out, mask, a, axis=None, keepdims=False):
    return (scale(_expand(g, a.shape, axis, keepdims), 1.0 / _count(a.shape, axis)),)


def _fw_inner(a, b):
    if a.shape != b.shape:
        raise ValueError(f"inner needs equal shapes, got {a.shape} and {b.shape}")
    return np.asarray(np.einsum("...i,...i->...", a, b))


def _vjp_inner(g, out, mask, a, b):
    ge = reshape(g, g.shape + (1,))
    return (mul(ge, b) if mask[0] else None,
            mul(ge, a) if mask[1] else None)


def _stable_lse(a, axis, keepdims):
    m = np.max(a, axis=axis, keepdims=True)
    r = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return r if keepdims else np.squeeze(r, axis=axis)


def _fw_logsumexp(a, axis=-1, keepdims=False):
    return np.asarray(_stable_lse(a, axis, keepdims))


def _vjp_logsumexp(g, out, mask, a, axis=-1, keepdims=False):
    return (mul(_expand(g, a.shape, axis, keepdims), softmax(a, axis=axis)),)


def _fw_softmax(a, axis=-1):
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _vjp_softmax(g, out, mask, a, axis=-1):
    s = softmax(a, axis=axis)
    gs = mul(g, s)
    return (sub(gs, mul(s, sum(gs, axis=axis, keepdims=True))),)


def _fw_cross_entropy(z, labels):
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError(f"cross_entropy needs logits (B,C) and labels (B,), got {z.shape}, {labels.shape}")
    idx = labels.astype(np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= z.shape[1]:
        raise ValueError("label out of range")
    return _stable_lse(z, -1, False) - z[np.arange(len(idx)), idx]


def _vjp_cross_entropy(g, out, mask, z, labels):
    idx = labels.data.astype(np.int64)
    onehot = np.zeros(z.shape)
    onehot[np.arange(len(idx)), idx] = 1.0
    ge = reshape(g, g.shape + (1,))
    return (mul(ge, sub(softmax(z, axis=-1), Tensor(onehot))), None)


def _fw_l2norm(a, axis=-1):
    return np.sqrt(np.sum(a * a, axis=axis))


def _vjp_l2norm(g, out, mask, a, axis=-1):
    n = l2norm(a, axis=axis)
    guard = Tensor((n.data == 0).astype(np.float64))
    unit = div(a, _expand(add(n, guard), a.shape, axis, False))
    return (mul(_expand(g, a.shape, axis, False), unit),)


def _fw_abs(a):
    return np.abs(a)


def _vjp_abs(g, out, mask, a):
    return (mul(g, Tensor(np.sign(a.data))),)


_register("add", _fw_add, _vjp_add)
_register("subtract", _fw_sub, _vjp_sub)
_register("multiply", _fw_mul, _vjp_mul)
_register("scale", _fw_scale, _vjp_scale)
_register("matmul", _fw_matmul, _vjp_matmul)
_register("affine", _fw_affine, _vjp_affine)
_register("relu", _fw_relu, _vjp_relu)
_register("softplus", _fw_softplus, _vjp_softplus)
_register("square", _fw_square, _vjp_square)
_register("sum", _fw_sum, _vjp_sum)
_register("mean", _fw_mean, _vjp_mean)
_register("inner", _fw_inner, _vjp_inner)
_register("logsumexp", _fw_logsumexp, _vjp_logsumexp)
_register("softmax", _fw_softmax, _vjp_softmax)
_register("cross_entropy", _fw_cross_entropy, _vjp_cross_entropy)
_register("l2norm", _fw_l2norm, _vjp_l2norm)
_register("abs", _fw_abs, _vjp_abs)
# adjoint plumbing, not part of the user-facing set
_register("divide", _fw_div, _vjp_div, public=False)
_register("transpose", _fw_transpose, _vjp_transpose, public=False)
_register("reshape", _fw_reshape, _vjp_reshape, public=False)
_register("sum_to", _fw_sum_to, _vjp_sum_to, public=False)
_register("broadcast_to", _fw_broadcast_to, _vjp_broadcast_to, public=False)
_register("sigmoid", _fw_sigmoid, _vjp_sigmoid, public=False)


def add(a, b): return apply_primitive("add", a, b)
def sub(a, b): return apply_primitive("subtract", a, b)
def mul(a, b): return apply_primitive("multiply", a, b)
def div(a, b): return apply_primitive("divide", a, b)
def scale(a, c: float): return apply_primitive("scale", a, c=float(c))
def matmul(a, b): return apply_primitive("matmul", a, b)
def affine(x, w, b): return apply_primitive("affine", x, w, b)
def transpose(a): return apply_primitive("transpose", a)
def reshape(a, shape): return apply_primitive("reshape", a, shape=tuple(shape))
def relu(a): return apply_primitive("relu", a)
def softplus(a): return apply_primitive("softplus", a)
def sigmoid(a): return apply_primitive("sigmoid", a)
def square(a): return apply_primitive("square", a)
def sum(a, axis=None, keepdims=False): return apply_primitive("sum", a, axis=axis, keepdims=keepdims)
def mean(a, axis=None, keepdims=False): return apply_primitive("mean", a, axis=axis, keepdims=keepdims)
def inner(a, b): return apply_primitive("inner", a, b)
def logsumexp(a, axis=-1, keepdims=False): return apply_primitive("logsumexp", a, axis=axis, keepdims=keepdims)
def softmax(a, axis=-1): return apply_primitive("softmax", a, axis=axis)
def l2norm(a, axis=-1): return apply_primitive("l2norm", a, axis=axis)
def abs(a): return apply_primitive("abs", a)


def cross_entropy(logits, labels) -> Tensor:
    """Per-sample ``logsumexp(z) - z[y]`` for integer labels."""
    return apply_primitive("cross_entropy", logits, np.asarray(labels, dtype=np.float64))


def log_softmax(z, axis=-1) -> Tensor:
    return sub(z, logsumexp(z, axis=axis, keepdims=True))


# --------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    max_rel_error: float
    status: str  # "pass" | "fail" | "inconclusive"
    worst_index: int = -1
    analytic: np.ndarray | None = None
    numeric: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def inconclusive(self) -> bool:
        return self.status == "inconclusive"


def _scalar(f, x):
    # probes run on a throwaway graph so functions that call backward still work
    v = f(Graph().variable(x))
    v = float(np.asarray(v.data if isinstance(v, Tensor) else v).reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError("function is not finite at a probe point")
    return v


def gradcheck(f: Callable[[Tensor], Tensor], point, tol: float = 1e-5,
              step: float = 1e-5, floor: float = 1e-8) -> GradcheckReport:
    """Compare the reverse-mode gradient of ``f`` at ``point`` with central differences.

    Relative error per coordinate is ``|a-b| / max(|a|, |b|, floor)``. A
    coordinate where the one-sided slopes disagree by an amount that does not
    shrink with the step is a kink; the report is then marked inconclusive
    instead of failed.
    """
    x0 = np.array(point, dtype=np.float64)
    g = Graph()
    xv = g.variable(x0)
    out = f(xv)
    if out.size != 1:
        raise ContractError("gradcheck needs a scalar-valued function")
    analytic = g.grad(out, [xv])[0].data.reshape(-1)

    flat = x0.reshape(-1)
    f0 = _scalar(f, x0)
    numeric = np.empty_like(flat)
    kink = False
    for i in range(flat.size):
        def at(h):
            xp = flat.copy()
            xp[i] += h
            return _scalar(f, xp.reshape(x0.shape))
        fp, fm = at(step), at(-step)
        numeric[i] = (fp - fm) / (2 * step)
        gap = np.abs((fp - f0) - (f0 - fm)) / step
        if gap > 1e-6 * max(1.0, np.abs(numeric[i])):
            h2 = step / 2
            gap2 = np.abs((at(h2) - f0) - (f0 - at(-h2))) / h2
            if gap2 > 0.75 * gap:
                kink = True
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else -1
    err = float(rel.max()) if rel.size else 0.0
    status = "inconclusive" if kink else ("pass" if err < tol else "fail")
    return GradcheckReport(err, status, worst, analytic, numeric)
