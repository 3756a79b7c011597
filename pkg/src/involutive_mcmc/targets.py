"""Analytic target densities with exact samplers.

Each target exposes an unnormalized log density (``log_unnormalized``) and
its log normalizer ``log_z``; :meth:`TargetDensity.log_density` is their
difference. Differentiable versions operate on autodiff nodes so generator
parameters receive gradients through the acceptance ratio.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, ndtr

from . import autodiff as ad
from .errors import ConfigError

__all__ = ["TargetDensity", "GaussianMixture", "StandardNormal", "mix2_1d", "mog6_2d",
           "std_normal", "get_target", "TARGETS"]

LOG_2PI = np.log(2.0 * np.pi)


class TargetDensity:
    """Interface shared by targets and the auxiliary density."""

    name: str
    dim: int
    log_z: float

    def log_unnormalized(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_unnormalized_node(self, x) -> ad.Node:
        raise NotImplementedError

    def grad_log_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.log_unnormalized(x) - self.log_z

    def log_density_node(self, x) -> ad.Node:
        return ad.add(self.log_unnormalized_node(x), -self.log_z)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def has_sampler(self) -> bool:
        return True

    def marginal_cdf(self, coord: int, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def marginal_pdf(self, coord: int, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def marginal_range(self, coord: int) -> tuple[float, float]:
        raise NotImplementedError

    def mode_of(self, x: np.ndarray) -> np.ndarray:
        """Index of the mode each row belongs to (targets without modes return zeros)."""
        return np.zeros(np.shape(x)[0], dtype=int)

    def describe(self) -> dict:
        raise NotImplementedError


class GaussianMixture(TargetDensity):
    """Equal-weight mixture of isotropic Gaussians sharing one standard deviation."""

    def __init__(self, name: str, means, sd: float, mode_rule: str = "nearest"):
        self.name = name
        self.means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        self.k, self.dim = self.means.shape
        self.sd = float(sd)
        if self.sd <= 0:
            raise ValueError("sd must be positive")
        self.mode_rule = mode_rule
        self.log_z = np.log(self.k) + 0.5 * self.dim * LOG_2PI + self.dim * np.log(self.sd)

    def _exponents(self, x):
        d = x[..., None, :] - self.means
        return -0.5 * np.sum(d * d, axis=-1) / self.sd**2

    def log_unnormalized(self, x):
        return logsumexp(self._exponents(np.asarray(x, dtype=np.float64)), axis=-1)

    def log_unnormalized_node(self, x):
        x = ad.as_node(x)
        cols = []
        for mu in self.means:
            cols.append(ad.sum(ad.square(ad.sub(x, mu)), axis=-1))
        # stack component exponents on a trailing axis
        sq = _stack_last(cols)
        return ad.logsumexp(ad.scale(sq, -0.5 / self.sd**2), axis=-1)

    def grad_log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        e = self._exponents(x)
        w = np.exp(e - logsumexp(e, axis=-1, keepdims=True))
        return np.einsum("...k,...kd->...d", w, self.means - x[..., None, :]) / self.sd**2

    def sample(self, rng, size):
        comp = rng.integers(self.k, size=size)
        return self.means[comp] + self.sd * rng.standard_normal((size, self.dim))

    def marginal_cdf(self, coord, t):
        t = np.asarray(t, dtype=np.float64)
        return np.mean(ndtr((t[..., None] - self.means[:, coord]) / self.sd), axis=-1)

    def marginal_pdf(self, coord, t):
        z = (np.asarray(t, dtype=np.float64)[..., None] - self.means[:, coord]) / self.sd
        return np.mean(np.exp(-0.5 * z * z), axis=-1) / (self.sd * np.sqrt(2 * np.pi))

    def marginal_range(self, coord):
        m = self.means[:, coord]
        return float(m.min() - 6 * self.sd), float(m.max() + 6 * self.sd)

    def mode_of(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.mode_rule == "sign":
            return (x[..., 0] > 0).astype(int)
        d = x[..., None, :] - self.means
        return np.argmin(np.sum(d * d, axis=-1), axis=-1)

    def describe(self):
        return {"name": self.name, "means": self.means.tolist(), "sd": self.sd}


class StandardNormal(TargetDensity):
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.name = "std_normal"
        self.dim = int(dim)
        self.log_z = 0.5 * self.dim * LOG_2PI

    def log_unnormalized(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -0.5 * np.sum(x * x, axis=-1)

    def log_unnormalized_node(self, x):
        return ad.scale(ad.sum(ad.square(x), axis=-1), -0.5)

    def grad_log_density(self, x):
        return -np.asarray(x, dtype=np.float64)

    def sample(self, rng, size):
        return rng.standard_normal((size, self.dim))

    def marginal_cdf(self, coord, t):
        return ndtr(np.asarray(t, dtype=np.float64))

    def marginal_pdf(self, coord, t):
        t = np.asarray(t, dtype=np.float64)
        return np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)

    def marginal_range(self, coord):
        return -6.0, 6.0

    def describe(self):
        return {"name": self.name, "dim": self.dim}


def _stack_last(nodes) -> ad.Node:
    """Stack same-shaped nodes along a new trailing axis."""
    values = np.stack([n.value for n in nodes], axis=-1)
    if not any(n.requires_grad for n in nodes):
        return ad.Node(values)
    return ad.Node(values, tuple(nodes),
                   lambda g: tuple(g[..., i] for i in range(len(nodes))), True)


def mix2_1d(mean: float = 0.5, sd: float = 0.05) -> GaussianMixture:
    """Two equal-weight 1-D Gaussians at +/-mean; ``sd`` is a standard deviation."""
    return GaussianMixture("mix2", [[-mean], [mean]], sd, mode_rule="sign")


def mog6_2d(radius: float = 5.0, sd: float = 0.5) -> GaussianMixture:
    """Six equal-weight isotropic Gaussians on a circle, at angles k * 60 degrees."""
    angles = np.arange(6) * np.pi / 3
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture("mog6", means, sd)


def std_normal(dim: int = 1) -> StandardNormal:
    return StandardNormal(dim)


TARGETS = {"mix2": mix2_1d, "mog6": mog6_2d, "std_normal": std_normal}


def get_target(name: str, **params) -> TargetDensity:
    try:
        factory = TARGETS[name]
    except KeyError:
        raise ConfigError(f"unknown target {name!r}; choose from {sorted(TARGETS)}") from None
    return factory(**params)
