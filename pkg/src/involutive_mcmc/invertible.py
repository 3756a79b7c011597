"""Volume-preserving invertible networks built from NICE additive couplings.

Layers are stateless descriptions of an architecture. Their weights live in a
:class:`~involutive_mcmc.autodiff.Parameters` snapshot and are passed to
``forward``/``inverse`` as a mapping from name to array or node.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

__all__ = ["MLP", "AdditiveCoupling", "FixedPermutation", "Shift", "InvertibleNet",
           "coupling_block", "build_invertible_net", "layer_from_descriptor"]


def _check_dim(x: ad.Node, dim: int):
    if x.value.shape[-1:] != (dim,):
        raise ShapeError(f"expected trailing dimension {dim}, got shape {x.value.shape}")


class MLP:
    """Dense ReLU network with a linear output layer."""

    def __init__(self, name: str, sizes):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.name = name
        self.sizes = [int(s) for s in sizes]

    def param_shapes(self):
        shapes = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            shapes[f"{self.name}.W{i}"] = (b, a)
            shapes[f"{self.name}.b{i}"] = (b,)
        return shapes

    def init_params(self, rng: np.random.Generator, zero_last: bool = True):
        """Uniform fan-in weights, zero biases; the output layer starts at zero if asked."""
        params = {}
        last = len(self.sizes) - 2
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(a)
            W = rng.uniform(-bound, bound, size=(b, a))
            if zero_last and i == last:
                W = np.zeros((b, a))
            params[f"{self.name}.W{i}"] = W
            params[f"{self.name}.b{i}"] = np.zeros(b)
        return params

    def __call__(self, x, p):
        h = ad.as_node(x)
        last = len(self.sizes) - 2
        for i in range(last + 1):
            h = ad.add(ad.matvec(p[f"{self.name}.W{i}"], h), p[f"{self.name}.b{i}"])
            if i < last:
                h = ad.relu(h)
        return h

    def descriptor(self):
        return {"name": self.name, "sizes": list(self.sizes)}


class AdditiveCoupling:
    """``(x_keep, x_move) -> (x_keep, x_move + m(x_keep))``; unit Jacobian determinant.

    The default partition keeps the even (``parity=0``) or odd (``parity=1``)
    coordinates fixed; for odd ``dim`` the two halves differ in size by one.
    """

    volume_preserving = True

    def __init__(self, name: str, dim: int, parity: int = 0, hidden=None, keep=None):
        if dim < 2:
            raise ValueError(f"additive coupling needs dimension >= 2, got {dim}")
        self.name = name
        self.dim = int(dim)
        self.parity = int(parity)
        if keep is None:
            keep = np.arange(self.parity, dim, 2)
        keep = np.asarray(keep, dtype=np.intp)
        move = np.setdiff1d(np.arange(dim), keep)
        if (np.unique(keep).size != keep.size or not 0 < keep.size < dim
                or keep.min() < 0 or keep.max() >= dim):
            raise ValueError("coupling partition must split the coordinates into two nonempty parts")
        self.keep, self.move = keep, move
        self._order = np.concatenate([keep, move])
        self._unorder = np.argsort(self._order)
        hidden = [8 * keep.size] if hidden is None else list(hidden)
        self.shift = MLP(f"{name}.m", [keep.size, *hidden, move.size])

    def param_shapes(self):
        return self.shift.param_shapes()

    def init_params(self, rng, zero_last=True):
        return self.shift.init_params(rng, zero_last=zero_last)

    def _halves(self, x):
        _check_dim(x, self.dim)
        return ad.split(ad.permute(x, self._order), [self.keep.size, self.move.size])

    def _join(self, a, b):
        return ad.permute(ad.concat([a, b]), self._unorder)

    def forward(self, x, p):
        x1, x2 = self._halves(ad.as_node(x))
        return self._join(x1, ad.add(x2, self.shift(x1, p)))

    def inverse(self, y, p):
        y1, y2 = self._halves(ad.as_node(y))
        return self._join(y1, ad.sub(y2, self.shift(y1, p)))

    def descriptor(self):
        return {"type": "coupling", "name": self.name, "dim": self.dim,
                "keep": self.keep.tolist(), "hidden": self.shift.sizes[1:-1]}


class FixedPermutation:
    volume_preserving = True

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.intp)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("not a permutation")
        self.perm = perm
        self.inv = np.argsort(perm)
        self.dim = perm.size

    def param_shapes(self):
        return {}

    def init_params(self, rng, zero_last=True):
        return {}

    def forward(self, x, p=None):
        return ad.permute(x, self.perm)

    def inverse(self, y, p=None):
        return ad.permute(y, self.inv)

    def descriptor(self):
        return {"type": "permutation", "perm": self.perm.tolist()}


class Shift:
    """``x -> x + b`` with a trainable offset; works in any dimension, including 1."""

    volume_preserving = True

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = int(dim)

    def param_shapes(self):
        return {f"{self.name}.b": (self.dim,)}

    def init_params(self, rng, zero_last=True):
        return {f"{self.name}.b": np.zeros(self.dim)}

    def forward(self, x, p):
        return ad.add(x, p[f"{self.name}.b"])

    def inverse(self, y, p):
        return ad.sub(y, p[f"{self.name}.b"])

    def descriptor(self):
        return {"type": "shift", "name": self.name, "dim": self.dim}


class InvertibleNet:
    """Sequential composition of invertible layers of a common dimension."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError("an invertible net needs at least one layer")
        dims = {layer.dim for layer in layers}
        if len(dims) != 1:
            raise ShapeError(f"layer dimensions disagree: {sorted(dims)}")
        self.layers = layers
        self.dim = dims.pop()
        names = [k for layer in layers for k in layer.param_shapes()]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names inside an invertible net")

    @property
    def volume_preserving(self) -> bool:
        return all(layer.volume_preserving for layer in self.layers)

    def param_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def init_params(self, rng, zero_last=True):
        params = {}
        for layer in self.layers:
            params.update(layer.init_params(rng, zero_last=zero_last))
        return params

    def forward(self, x, p=None):
        x = ad.as_node(x)
        _check_dim(x, self.dim)
        for layer in self.layers:
            x = layer.forward(x, p)
        return x

    def inverse(self, y, p=None):
        y = ad.as_node(y)
        _check_dim(y, self.dim)
        for layer in reversed(self.layers):
            y = layer.inverse(y, p)
        return y

    def descriptor(self):
        return {"type": "invertible", "layers": [layer.descriptor() for layer in self.layers]}


def coupling_block(name: str, dim: int, hidden_mult: int = 8):
    """Two couplings with complementary partitions, so every coordinate gets updated."""
    hidden = [hidden_mult * max(1, dim // 2)]
    return [AdditiveCoupling(f"{name}.c0", dim, 0, hidden=hidden),
            AdditiveCoupling(f"{name}.c1", dim, 1, hidden=hidden)]


def build_invertible_net(name: str, dim: int, rng: np.random.Generator,
                         hidden_mult: int = 8) -> InvertibleNet:
    """Coupling block, uniformly random permutation, coupling block."""
    layers = coupling_block(f"{name}.b0", dim, hidden_mult)
    layers.append(FixedPermutation(rng.permutation(dim)))
    layers += coupling_block(f"{name}.b2", dim, hidden_mult)
    return InvertibleNet(layers)


def layer_from_descriptor(desc):
    kind = desc["type"]
    if kind == "coupling":
        return AdditiveCoupling(desc["name"], desc["dim"], keep=desc["keep"], hidden=desc["hidden"])
    if kind == "permutation":
        return FixedPermutation(desc["perm"])
    if kind == "shift":
        return Shift(desc["name"], desc["dim"])
    if kind == "invertible":
        return InvertibleNet([layer_from_descriptor(d) for d in desc["layers"]])
    raise ValueError(f"unknown invertible layer type {kind!r}")
