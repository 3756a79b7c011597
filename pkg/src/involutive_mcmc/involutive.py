"""Involutive blocks and the closure rules that compose them.

A network is a tree over five productions:

* ``FunctionBlock(g)``: ``x -> g^-1(x_hi) ++ g(x_lo)`` for an invertible ``g``
* ``PermutationBlock(sigma)`` for a self-inverse permutation ``sigma``
* ``MatrixBlock``: ``x -> x - 2 (w.x)/(v.w) v``
* ``Sandwich(I, J)``: ``I o J o I`` for involutive ``I`` and ``J``
* ``Conjugate(g, J)``: ``g^-1 o J o g`` for invertible ``g``

Constructors only accept these shapes, so every tree is an involution by
construction. Anything else (for instance ``I o J`` with ``I != J``) raises
:class:`GrammarError`.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import DimensionTooLarge, DomainError, GrammarError, ShapeError
from .invertible import InvertibleNet, build_invertible_net, layer_from_descriptor

__all__ = [
    "Involution", "FunctionBlock", "PermutationBlock", "MatrixBlock", "IdentityBlock",
    "Sandwich", "Conjugate", "InvolutiveNetwork", "palindrome", "apply",
    "count_involutions", "sample_involutive_permutation", "log_abs_det_jacobian_numeric",
    "build_generator", "random_network", "from_descriptor",
]


def _check_input(x, dim):
    x = ad.as_node(x)
    if x.value.shape[-1:] != (dim,):
        raise ShapeError(f"expected trailing dimension {dim}, got shape {x.value.shape}")
    return x


class Involution:
    """Base class of grammar productions."""

    dim: int

    @property
    def volume_preserving(self) -> bool:
        raise NotImplementedError

    def children(self):
        return ()

    def _own_params(self):
        return {}

    def param_shapes(self):
        """Parameter shapes of the whole tree; blocks reused in a sandwich share weights."""
        owners = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in owners:
                continue
            owners[id(node)] = node._own_params()
            stack.extend(k for k in node.children() if isinstance(k, Involution))
        shapes = {}
        for own in owners.values():
            for name, shape in own.items():
                if name in shapes:
                    raise GrammarError(f"parameter name {name!r} used by two different blocks")
                shapes[name] = shape
        return shapes

    def init_params(self, rng, zero_last=True) -> dict:
        params, seen = {}, set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            params.update(node._init_own(rng, zero_last))
            stack.extend(k for k in reversed(node.children()) if isinstance(k, Involution))
        return params

    def _init_own(self, rng, zero_last):
        return {}

    def apply(self, x, p=None) -> ad.Node:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def leaves(self):
        out, seen = [], set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            kids = node.children()
            if not kids or isinstance(node, FunctionBlock):
                out.append(node)
            stack.extend(k for k in kids if isinstance(k, Involution))
        return out


class FunctionBlock(Involution):
    def __init__(self, g: InvertibleNet):
        if not isinstance(g, InvertibleNet):
            raise GrammarError("a function block needs an InvertibleNet")
        self.g = g
        self.dim = 2 * g.dim

    @property
    def volume_preserving(self):
        return self.g.volume_preserving

    def children(self):
        return (self.g,)

    def _own_params(self):
        return self.g.param_shapes()

    def _init_own(self, rng, zero_last):
        return self.g.init_params(rng, zero_last=zero_last)

    def apply(self, x, p=None):
        x = _check_input(x, self.dim)
        lo, hi = ad.split(x, [self.g.dim, self.g.dim])
        return ad.concat([self.g.inverse(hi, p), self.g.forward(lo, p)])

    def descriptor(self):
        return {"type": "function", "g": self.g.descriptor()}


class PermutationBlock(Involution):
    volume_preserving = True

    def __init__(self, sigma):
        sigma = np.asarray(sigma, dtype=np.intp)
        if sigma.ndim != 1 or not np.array_equal(np.sort(sigma), np.arange(sigma.size)):
            raise GrammarError("sigma is not a permutation")
        if not np.array_equal(sigma[sigma], np.arange(sigma.size)):
            raise GrammarError("sigma is not an involution")
        self.sigma = sigma
        self.dim = sigma.size

    def apply(self, x, p=None):
        return ad.permute(_check_input(x, self.dim), self.sigma)

    def descriptor(self):
        return {"type": "permutation", "sigma": self.sigma.tolist()}


class MatrixBlock(Involution):
    """Reflection-like block ``Id - 2 v (x) w / (v . w)`` with trainable ``v`` and unit ``w``."""

    volume_preserving = True
    min_cosine = 1e-8

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = int(dim)

    def _own_params(self):
        return {f"{self.name}.v": (self.dim,), f"{self.name}.w": (self.dim,)}

    def _init_own(self, rng, zero_last):
        while True:
            v = rng.standard_normal(self.dim)
            w = rng.standard_normal(self.dim)
            w /= np.linalg.norm(w)
            if abs(v @ w) >= 0.5 * np.linalg.norm(v):
                return {f"{self.name}.v": v, f"{self.name}.w": w}

    @staticmethod
    def check_vectors(v, w, min_cosine=min_cosine):
        v, w = np.asarray(v, dtype=float), np.asarray(w, dtype=float)
        nv, nw = np.linalg.norm(v), np.linalg.norm(w)
        if nv == 0 or nw == 0:
            raise DomainError("matrix block vectors must be nonzero")
        if abs(v @ w) < min_cosine * nv * nw:
            raise DomainError("v and w are (nearly) orthogonal")

    def apply(self, x, p=None):
        x = _check_input(x, self.dim)
        v, w = ad.as_node(p[f"{self.name}.v"]), ad.as_node(p[f"{self.name}.w"])
        self.check_vectors(v.value, w.value)
        vw = ad.sum(ad.mul(v, w))
        xw = ad.matvec(_row(w), x)
        coef = ad.div(ad.scale(xw, 2.0), vw)
        return ad.sub(x, ad.mul(coef, v))

    def matrix(self, p):
        v, w = np.asarray(p[f"{self.name}.v"]), np.asarray(p[f"{self.name}.w"])
        return np.eye(self.dim) - 2.0 * np.outer(v, w) / (v @ w)

    def renormalize(self, params: ad.Parameters) -> ad.Parameters:
        w = params[f"{self.name}.w"]
        return params.replace(**{f"{self.name}.w": w / np.linalg.norm(w)})

    def descriptor(self):
        return {"type": "matrix", "name": self.name, "dim": self.dim}


def _row(w: ad.Node) -> ad.Node:
    """View a length-n node as a (1, n) matrix."""
    wv = w.value
    if not w.requires_grad:
        return ad.constant(wv[None, :])
    return ad.Node(wv[None, :], (w,), lambda g: (g.reshape(wv.shape),), True)


class IdentityBlock(Involution):
    """Degenerate involution; exposed for tests only."""

    volume_preserving = True

    def __init__(self, dim: int):
        self.dim = int(dim)

    def apply(self, x, p=None):
        return _check_input(x, self.dim)

    def descriptor(self):
        return {"type": "identity", "dim": self.dim}


class Sandwich(Involution):
    """``outer o inner o outer``."""

    def __init__(self, outer: Involution, inner: Involution):
        if not isinstance(outer, Involution) or not isinstance(inner, Involution):
            raise GrammarError("a sandwich composes two involutive networks")
        if outer.dim != inner.dim:
            raise GrammarError(f"dimension mismatch {outer.dim} vs {inner.dim}")
        self.outer, self.inner = outer, inner
        self.dim = outer.dim

    @property
    def volume_preserving(self):
        return self.outer.volume_preserving and self.inner.volume_preserving

    def children(self):
        return (self.outer, self.inner)

    def apply(self, x, p=None):
        return self.outer.apply(self.inner.apply(self.outer.apply(x, p), p), p)

    def descriptor(self):
        return {"type": "sandwich", "outer": self.outer.descriptor(),
                "inner": self.inner.descriptor()}


class Conjugate(Involution):
    """``g^-1 o inner o g``."""

    def __init__(self, g: InvertibleNet, inner: Involution):
        if not isinstance(g, InvertibleNet):
            raise GrammarError("conjugation needs an InvertibleNet")
        if not isinstance(inner, Involution):
            raise GrammarError("only an involutive network can be conjugated")
        if g.dim != inner.dim:
            raise GrammarError(f"dimension mismatch {g.dim} vs {inner.dim}")
        self.g, self.inner = g, inner
        self.dim = g.dim

    @property
    def volume_preserving(self):
        return self.g.volume_preserving and self.inner.volume_preserving

    def children(self):
        return (self.g, self.inner)

    def _own_params(self):
        return self.g.param_shapes()

    def _init_own(self, rng, zero_last):
        return self.g.init_params(rng, zero_last=zero_last)

    def apply(self, x, p=None):
        return self.g.inverse(self.inner.apply(self.g.forward(x, p), p), p)

    def descriptor(self):
        return {"type": "conjugate", "g": self.g.descriptor(), "inner": self.inner.descriptor()}


def palindrome(blocks) -> Involution:
    """Compose ``b0 o b1 o ... o bk o ... o b1 o b0`` from the listed blocks.

    The list must read the same in both directions (by object identity) and
    have odd length; it is then a nest of sandwiches.
    """
    blocks = list(blocks)
    if not blocks or len(blocks) % 2 == 0:
        raise GrammarError("a composition of involutions must be a palindrome of odd length")
    for a, b in zip(blocks, reversed(blocks)):
        if a is not b:
            raise GrammarError("composition is not of the form I o J o I")
    net = blocks[len(blocks) // 2]
    for outer in reversed(blocks[: len(blocks) // 2]):
        net = Sandwich(outer, net)
    if not isinstance(net, Involution):
        raise GrammarError("palindrome entries must be involutive networks")
    return net


def from_descriptor(desc) -> Involution:
    kind = desc.get("type")
    if kind == "function":
        return FunctionBlock(layer_from_descriptor(desc["g"]))
    if kind == "permutation":
        return PermutationBlock(desc["sigma"])
    if kind == "matrix":
        return MatrixBlock(desc["name"], desc["dim"])
    if kind == "identity":
        return IdentityBlock(desc["dim"])
    if kind == "sandwich":
        return Sandwich(from_descriptor(desc["outer"]), from_descriptor(desc["inner"]))
    if kind == "conjugate":
        return Conjugate(layer_from_descriptor(desc["g"]), from_descriptor(desc["inner"]))
    raise GrammarError(f"unknown block type {kind!r}")


class InvolutiveNetwork:
    """A grammar tree together with a parameter snapshot."""

    def __init__(self, root: Involution, params: ad.Parameters | None = None):
        if not isinstance(root, Involution):
            raise GrammarError("root must be an involutive network")
        shapes = root.param_shapes()
        params = ad.Parameters() if params is None else params
        if set(shapes) != set(params):
            missing = sorted(set(shapes) ^ set(params))
            raise ShapeError(f"parameters do not match architecture: {missing[:5]}")
        for name, shape in shapes.items():
            if params[name].shape != tuple(shape):
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.root = root
        self.params = params
        self.dim = root.dim

    @property
    def volume_preserving(self):
        return self.root.volume_preserving

    def with_params(self, params) -> InvolutiveNetwork:
        return InvolutiveNetwork(self.root, params)

    def apply_node(self, x, p=None) -> ad.Node:
        return self.root.apply(x, self.params if p is None else p)

    def __call__(self, x) -> np.ndarray:
        return self.root.apply(np.asarray(x, dtype=np.float64), self.params).value

    def renormalize(self, params: ad.Parameters) -> ad.Parameters:
        for leaf in self.root.leaves():
            if isinstance(leaf, MatrixBlock):
                params = leaf.renormalize(params)
        return params


def apply(net, x) -> np.ndarray:
    """Apply an involutive network to a vector or a batch of row vectors."""
    if isinstance(net, InvolutiveNetwork):
        return net(x)
    return net.apply(np.asarray(x, dtype=np.float64)).value


# ---------------------------------------------------------------- permutations


@lru_cache(maxsize=None)
def count_involutions(n: int) -> int:
    """Number of involutions of an n-set: I(n) = I(n-1) + (n-1) I(n-2)."""
    if n < 2:
        return 1
    return count_involutions(n - 1) + (n - 1) * count_involutions(n - 2)


def sample_involutive_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random involution of ``{0..n-1}`` as an index array.

    The smallest unassigned element stays fixed with probability
    I(m-1)/I(m), otherwise it is paired with a uniform partner.
    """
    if n < 1:
        raise ValueError("n must be positive")
    sigma = np.arange(n)
    remaining = list(range(n))
    while remaining:
        m = len(remaining)
        first = remaining.pop(0)
        if m == 1 or rng.random() < count_involutions(m - 1) / count_involutions(m):
            continue
        partner = remaining.pop(int(rng.integers(m - 1)))
        sigma[first], sigma[partner] = partner, first
    return sigma


# ---------------------------------------------------------------- numerics


def log_abs_det_jacobian_numeric(f, x, h: float = 1e-5, max_dim: int = 16) -> float:
    """Central-difference estimate of ``log|det J_f(x)|``.

    ``f`` may be an :class:`InvolutiveNetwork`, an :class:`Involution` or a
    callable mapping a 1-D array to a 1-D array.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    if d > max_dim:
        raise DimensionTooLarge(f"dense Jacobian limited to dimension {max_dim}, got {d}")
    fn = (lambda z: apply(f, z)) if isinstance(f, (InvolutiveNetwork, Involution)) else f
    steps = h * np.eye(d)
    batch = np.concatenate([x + steps, x - steps])
    out = np.asarray(fn(batch)) if _accepts_batch(f) else np.array([fn(z) for z in batch])
    jac = (out[:d] - out[d:]).T / (2 * h)
    return float(np.linalg.slogdet(jac)[1])


def _accepts_batch(f):
    return isinstance(f, (InvolutiveNetwork, Involution))


# ---------------------------------------------------------------- builders


def build_generator(state_dim: int, aux_dim: int, rng: np.random.Generator,
                    hidden_mult: int = 8, zero_last: bool = True) -> InvolutiveNetwork:
    """``I_F^g o I_P^s o I_F^h o I_P^s o I_F^g`` over the joint (state, aux) vector.

    ``s`` is a uniform random involution fixed here; ``g`` and ``h`` are
    coupling block / random permutation / coupling block nets on half the
    joint dimension.
    """
    total = state_dim + aux_dim
    if total % 2:
        raise ShapeError(f"state_dim + aux_dim must be even, got {total}")
    half = total // 2
    sigma = sample_involutive_permutation(total, rng)
    g = FunctionBlock(build_invertible_net("g", half, rng, hidden_mult))
    h = FunctionBlock(build_invertible_net("h", half, rng, hidden_mult))
    perm = PermutationBlock(sigma)
    root = palindrome([g, perm, h, perm, g])
    return InvolutiveNetwork(root, ad.Parameters(root.init_params(rng, zero_last=zero_last)))


def random_network(dim: int, depth: int, rng: np.random.Generator,
                   hidden_mult: int = 2) -> InvolutiveNetwork:
    """Random grammar-valid network with ``depth`` blocks along its evaluation path.

    Used by the property suites; shift nets get nonzero output weights so the
    map is far from a permutation.
    """
    counter = iter(range(10**6))

    def leaf():
        kinds = ["perm", "matrix"] + (["function"] * 2 if dim % 2 == 0 and dim >= 4 else [])
        kind = kinds[rng.integers(len(kinds))]
        if kind == "perm":
            return PermutationBlock(sample_involutive_permutation(dim, rng))
        if kind == "matrix":
            return MatrixBlock(f"M{next(counter)}", dim)
        return FunctionBlock(build_invertible_net(f"F{next(counter)}", dim // 2, rng, hidden_mult))

    def build(budget):
        if budget < 3:
            return leaf()
        if dim % 2 == 0 and rng.random() < 0.3:
            g = build_invertible_net(f"C{next(counter)}", dim, rng, hidden_mult)
            return Conjugate(g, build(budget - 2))
        return Sandwich(leaf(), build(budget - 2))

    root = build(depth)
    params = ad.Parameters(root.init_params(rng, zero_last=False))
    return InvolutiveNetwork(root, params)
