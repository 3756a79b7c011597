"""Reverse-mode differentiation over dense float64 arrays.

Every operation returns a :class:`Node` whose ``value`` is an ``ndarray``.
Nodes that depend on a differentiable leaf record their parents and a
vector-Jacobian product; everything else is a plain constant, so the same
network code serves both training (graph recorded) and sampling (no graph).

Leading axes are batch axes. Binary operations follow numpy broadcasting and
reduce adjoints back to each operand's shape.
"""
from __future__ import annotations

import builtins
from collections.abc import Iterator, Mapping, Sequence

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Node", "Parameters", "constant", "variable", "as_node", "forward_op", "backward",
    "add", "sub", "mul", "div", "matvec", "concat", "split", "permute", "relu",
    "sigmoid", "tanh", "exp", "log", "min_with_one", "min_with_zero", "logsumexp",
    "square", "sum", "mean", "negate", "scale", "rmsprop_step", "clamp_weights",
]


class Node:
    __slots__ = ("value", "parents", "vjp", "requires_grad", "name")

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

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
        return negate(self)


def constant(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64))


def variable(x, name=None) -> Node:
    return Node(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _result(value, parents, vjp) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents, vjp, True)
    return Node(value)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a.value.shape} and {b.value.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    sa, sb = a.value.shape, b.value.shape
    return _result(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    sa, sb = a.value.shape, b.value.shape
    return _result(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise DomainError("division by zero")
    out = av / bv
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def negate(a) -> Node:
    a = as_node(a)
    return _result(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Node:
    a = as_node(a)
    c = float(c)
    return _result(c * a.value, (a,), lambda g: (c * g,))


def square(a) -> Node:
    a = as_node(a)
    av = a.value
    return _result(av * av, (a,), lambda g: (2.0 * av * g,))


def relu(a) -> Node:
    a = as_node(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Node:
    a = as_node(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Node:
    a = as_node(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflow")
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = as_node(a)
    av = a.value
    if np.any(av <= 0):
        raise DomainError("log of a nonpositive value")
    return _result(np.log(av), (a,), lambda g: (g / av,))


def min_with_one(a) -> Node:
    """``min(x, 1)``; the adjoint is zero on the clipped side, including x == 1."""
    a = as_node(a)
    mask = a.value < 1.0
    return _result(np.where(mask, a.value, 1.0), (a,), lambda g: (g * mask,))


def min_with_zero(a) -> Node:
    """Log-space counterpart of :func:`min_with_one`: ``min(x, 0)``."""
    a = as_node(a)
    mask = a.value < 0.0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def logsumexp(a, axis=-1) -> Node:
    a = as_node(a)
    av = a.value
    m = np.max(av, axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    weights = e / s
    return _result(out, (a,), lambda g: (np.expand_dims(g, axis) * weights,))


# ---------------------------------------------------------------- structural


def matvec(w, x) -> Node:
    """Apply matrix ``w`` of shape (out, in) to every row of ``x`` (..., in)."""
    w, x = as_node(w), as_node(x)
    wv, xv = w.value, x.value
    if wv.ndim != 2 or xv.shape[-1:] != wv.shape[1:]:
        raise ShapeError(f"matvec: matrix {wv.shape} incompatible with input {xv.shape}")

    def vjp(g):
        g2 = g.reshape(-1, wv.shape[0])
        return (g2.T @ xv.reshape(-1, wv.shape[1]), g @ wv)

    return _result(xv @ wv.T, (w, x), vjp)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([n.value.shape[axis] for n in nodes])[:-1]
    return _result(out, tuple(nodes), lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(a, sizes: Sequence[int], axis: int = -1) -> list[Node]:
    a = as_node(a)
    av = a.value
    if builtins.sum(sizes) != av.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to {av.shape[axis]}")
    bounds = np.cumsum(sizes)[:-1]
    pieces = np.split(av, bounds, axis=axis)
    if not a.requires_grad:
        return [Node(p) for p in pieces]
    out = []
    start = 0
    for piece, size in zip(pieces, sizes):
        sl = [slice(None)] * av.ndim
        sl[axis] = slice(start, start + size)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            full = np.zeros_like(av)
            full[sl] = g
            return (full,)

        out.append(Node(piece, (a,), vjp, True))
        start += size
    return out


def permute(a, perm) -> Node:
    """Reorder the last axis: ``out[..., i] = a[..., perm[i]]``."""
    a = as_node(a)
    perm = np.asarray(perm, dtype=np.intp)
    if perm.shape != a.value.shape[-1:]:
        raise ShapeError(f"permutation of length {perm.size} applied to {a.value.shape}")
    inv = np.argsort(perm)
    return _result(a.value[..., perm], (a,), lambda g: (g[..., inv],))


def sum(a, axis=None) -> Node:  # noqa: A001 - mirrors numpy
    a = as_node(a)
    shape = a.value.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.value, axis=axis), (a,), vjp)


def mean(a, axis=None) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


_OPS = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matvec": matvec,
    "concat": lambda *xs, axis=-1: concat(xs, axis=axis), "split": split,
    "permute": permute, "relu": relu, "sigmoid": sigmoid, "tanh": tanh, "exp": exp,
    "log": log, "min_with_one": min_with_one, "min_with_zero": min_with_zero,
    "logsumexp": logsumexp, "square": square, "sum": sum, "mean": mean,
    "negate": negate, "scale": scale,
}


def forward_op(kind: str, *inputs, **kwargs):
    """Dispatch a primitive by name, e.g. ``forward_op("add", x, y)``."""
    try:
        op = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return op(*inputs, **kwargs)


# ---------------------------------------------------------------- backward


def _topological(root: Node) -> list[Node]:
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


def backward(root: Node, wrt):
    """Adjoints of scalar ``root`` with respect to the leaves in ``wrt``.

    ``wrt`` is either a mapping ``name -> Node`` (a dict of gradients keyed
    the same way is returned) or a sequence of nodes (a list is returned).
    Leaves that ``root`` does not depend on get zero adjoints.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
    adj = {id(root): np.ones_like(root.value)}
    leaf_adj = {}
    if root.requires_grad:
        for node in reversed(_topological(root)):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            if node.vjp is None:
                leaf_adj[id(node)] = g
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adj:
                    adj[key] = adj[key] + pg
                else:
                    adj[key] = pg

    def lookup(node):
        g = leaf_adj.get(id(node))
        return np.zeros_like(node.value) if g is None else np.reshape(g, node.value.shape)

    if isinstance(wrt, Mapping):
        return {name: lookup(node) for name, node in wrt.items()}
    return [lookup(node) for node in wrt]


# ---------------------------------------------------------------- parameters


class Parameters(Mapping):
    """Named float64 segments, one per layer tensor.

    Treated as an immutable snapshot: updates return a new instance.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays = {k: np.array(v, dtype=np.float64) for k, v in (arrays or {}).items()}

    def __getitem__(self, name):
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __repr__(self):
        return f"Parameters({len(self)} segments, {self.size} values)"

    @property
    def size(self) -> int:
        return int(np.sum([a.size for a in self._arrays.values()], dtype=np.int64))

    def leaves(self) -> dict[str, Node]:
        """Fresh differentiable leaf nodes for one forward/backward pass."""
        return {k: variable(v, name=k) for k, v in self._arrays.items()}

    def replace(self, **updates) -> Parameters:
        arrays = dict(self._arrays)
        arrays.update(updates)
        return Parameters(arrays)

    def merged(self, other: Mapping[str, np.ndarray]) -> Parameters:
        overlap = set(self) & set(other)
        if overlap:
            raise ValueError(f"duplicate parameter names: {sorted(overlap)}")
        return Parameters({**self._arrays, **other})

    def subset(self, names) -> Parameters:
        return Parameters({k: self._arrays[k] for k in names})

    def zeros_like(self) -> Parameters:
        return Parameters({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def bit_equal(self, other: Parameters) -> bool:
        if set(self) != set(other):
            return False
        return all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes()
            for k in self
        )


def _check_same_layout(a: Mapping, b: Mapping, what: str):
    if set(a) != set(b):
        raise ShapeError(f"{what}: parameter names differ")
    for k in a:
        if np.shape(a[k]) != np.shape(b[k]):
            raise ShapeError(f"{what}: shape mismatch for {k!r}")


def rmsprop_step(params: Parameters, grads: Mapping[str, np.ndarray], state=None,
                 lr: float = 5e-5, decay: float = 0.9, eps: float = 1e-8,
                 ascent: bool = False):
    """One RMSProp update; returns ``(new_params, new_state)``.

    ``acc <- decay*acc + (1-decay)*g**2`` and ``p <- p -/+ lr*g/sqrt(acc+eps)``,
    with ``+`` when ``ascent`` is set. Names absent from ``grads`` are left alone.
    """
    if lr <= 0 or not 0 < decay < 1:
        raise ValueError("need lr > 0 and 0 < decay < 1")
    if state is None:
        state = Parameters({k: np.zeros_like(params[k]) for k in grads})
    _check_same_layout({k: params[k] for k in grads}, grads, "rmsprop_step")
    _check_same_layout(state, grads, "rmsprop_step state")
    sign = 1.0 if ascent else -1.0
    new_params, new_state = {}, {}
    for k, g in grads.items():
        acc = decay * state[k] + (1.0 - decay) * g * g
        new_state[k] = acc
        new_params[k] = params[k] + sign * lr * g / np.sqrt(acc + eps)
    return params.replace(**new_params), Parameters(new_state)


def clamp_weights(params: Parameters, w: float, names=None) -> Parameters:
    if w <= 0:
        raise ValueError("clip bound must be positive")
    names = list(params) if names is None else names
    return params.replace(**{k: np.clip(params[k], -w, w) for k in names})
