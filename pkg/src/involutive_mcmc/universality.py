"""Explicit involution that turns Gaussian noise into a prescribed transition.

For a state dimension ``n`` the construction acts on ``phi ⌢ pi`` with
``pi`` of length ``n + 6``:

    I_eps = g_eps^-1 ∘ h_eps^-1 ∘ P_sigma ∘ h_eps ∘ g_eps

``g_eps`` scales the auxiliary block by ``eps`` and shifts two gate
coordinates, ``h_eps`` is an additive coupling built from the gated maps
``R_eps`` and ``S`` and ``sigma`` swaps each pair of gate coordinates. On the
event ``A_eps`` the first ``n`` outputs equal ``T(phi, pi_1) + eps*pi_{4..n+3}``,
so as ``eps -> 0`` the state output is distributed like ``T(phi, N(0, 1))``.

Indices in docstrings are 1-based; code uses 0-based slices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import ShapeError
from .rng import stream

__all__ = ["ConstructionParams", "default_transition", "R_eps", "S_fn", "g_eps", "g_eps_inv",
           "h_eps", "h_eps_inv", "sigma_permutation", "I_eps", "event_A_eps",
           "conditioned_output", "prob_A_eps", "check_distributional_convergence",
           "involution_residual", "sweep", "SWEEP_FIELDS"]


def default_transition(phi: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``T(phi, pi) = 0.5 tanh(pi)`` in every coordinate; range [-0.5, 0.5]."""
    return np.broadcast_to(0.5 * np.tanh(pi)[..., None], phi.shape).copy()


@dataclass(frozen=True)
class ConstructionParams:
    """``n`` state dimension, ``eps`` in (0, 1), transition ``T(phi, pi)`` into a ball of radius ``r``."""

    n: int = 1
    eps: float = 0.01
    T: Callable[[np.ndarray, np.ndarray], np.ndarray] = default_transition
    r: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.r <= 0:
            raise ValueError("r must be positive")

    @property
    def dim(self) -> int:
        return 2 * self.n + 6


def _check(x: np.ndarray, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != length:
        raise ShapeError(f"expected last dimension {length}, got {x.shape[-1]}")
    return x


def _gate(q: np.ndarray) -> np.ndarray:
    """0 for q <= -1/2, q + 1/2 on the ramp, 1 for q >= 1/2 (continuous at both ends)."""
    return np.clip(q + 0.5, 0.0, 1.0)[..., None]


def R_eps(x, params: ConstructionParams) -> np.ndarray:
    """Gated displacement ``(T(phi, x_{n+1}/eps) - phi) ⌢ 0^3`` with gate ``q = x_{n+3} - x_{n+2}``."""
    n = params.n
    x = _check(x, n + 3)
    phi = x[..., :n]
    pi = x[..., n] / params.eps
    q = x[..., n + 2] - x[..., n + 1]
    out = np.zeros_like(x)
    out[..., :n] = _gate(q) * (params.T(phi, pi) - phi)
    return out


def S_fn(x, params: ConstructionParams) -> np.ndarray:
    """Gated copy ``x_{1..n} ⌢ 0^3`` with gate ``q = x_{n+3} - x_{n+2}``."""
    n = params.n
    x = _check(x, n + 3)
    q = x[..., n + 2] - x[..., n + 1]
    out = np.zeros_like(x)
    out[..., :n] = _gate(q) * x[..., :n]
    return out


def _scale_shift(params: ConstructionParams):
    n = params.n
    scale = np.concatenate([np.ones(n), np.full(n + 6, params.eps)])
    shift = np.zeros(2 * n + 6)
    shift[n + 2] = 1.0
    shift[2 * n + 5] = 1.0
    return scale, shift


def g_eps(x, params: ConstructionParams) -> np.ndarray:
    scale, shift = _scale_shift(params)
    return _check(x, params.dim) * scale + shift


def g_eps_inv(x, params: ConstructionParams) -> np.ndarray:
    scale, shift = _scale_shift(params)
    return (_check(x, params.dim) - shift) / scale


def h_eps(x, params: ConstructionParams) -> np.ndarray:
    k = params.n + 3
    x = _check(x, params.dim)
    v = x[..., k:] + R_eps(x[..., :k], params)
    return np.concatenate([x[..., :k] + S_fn(v, params), v], axis=-1)


def h_eps_inv(x, params: ConstructionParams) -> np.ndarray:
    k = params.n + 3
    x = _check(x, params.dim)
    w = x[..., :k] - S_fn(x[..., k:], params)
    return np.concatenate([w, x[..., k:] - R_eps(w, params)], axis=-1)


def sigma_permutation(n: int) -> np.ndarray:
    """Swap positions n+2 <-> n+3 and 2n+5 <-> 2n+6 (1-based)."""
    perm = np.arange(2 * n + 6)
    for a, b in ((n + 1, n + 2), (2 * n + 4, 2 * n + 5)):
        perm[a], perm[b] = b, a
    return perm


def I_eps(x, params: ConstructionParams) -> np.ndarray:
    y = h_eps(g_eps(x, params), params)
    y = y[..., sigma_permutation(params.n)]
    return g_eps_inv(h_eps_inv(y, params), params)


def event_A_eps(pi, params: ConstructionParams) -> np.ndarray:
    """``pi_3 - pi_2 > -1/(2 eps)``, ``pi_{n+6} - pi_{n+5} > -1/(2 eps)`` and ``||pi||_2 < 1/eps``."""
    n, eps = params.n, params.eps
    pi = _check(pi, n + 6)
    return ((pi[..., 2] - pi[..., 1] > -0.5 / eps)
            & (pi[..., n + 5] - pi[..., n + 4] > -0.5 / eps)
            & (np.linalg.norm(pi, axis=-1) < 1.0 / eps))


def conditioned_output(phi, pi, params: ConstructionParams) -> np.ndarray:
    """Closed form valid on ``A_eps``: ``T(phi, pi_1) + eps * pi_{4..n+3}``."""
    n = params.n
    return params.T(np.asarray(phi, dtype=np.float64), pi[..., 0]) + params.eps * pi[..., 3:n + 3]


def involution_residual(x, params: ConstructionParams) -> float:
    return float(np.max(np.abs(I_eps(I_eps(x, params), params) - x)))


def prob_A_eps(params: ConstructionParams, n_samples: int, rng: np.random.Generator) -> float:
    return float(np.mean(event_A_eps(rng.standard_normal((n_samples, params.n + 6)), params)))


def check_distributional_convergence(params: ConstructionParams, n_samples: int,
                                     test_phi: float = 0.0, rng=None, seed: int = 0) -> float:
    """Two-sample KS statistic between ``I_eps(phi ⌢ pi)_1`` and ``T(phi, pi')`` (n = 1)."""
    if params.n != 1:
        raise ValueError("the KS variant needs n = 1")
    rng = stream(seed, "universality-ks") if rng is None else rng
    pi = rng.standard_normal((n_samples, params.n + 6))
    phi = np.full((n_samples, 1), float(test_phi))
    produced = I_eps(np.concatenate([phi, pi], axis=-1), params)[:, 0]
    reference = params.T(phi, rng.standard_normal(n_samples))[:, 0]
    return float(stats.ks_2samp(produced, reference).statistic)


SWEEP_FIELDS = ["eps", "p_A", "ks", "involution_residual"]


def sweep(eps_values=(0.5, 0.1, 0.02, 0.01), n_samples: int = 10_000, seed: int = 0,
          n: int = 1, T=default_transition, test_phi: float = 0.0) -> list[dict]:
    """One row per ``eps``: estimated ``P(A_eps)``, KS statistic and max involution residual."""
    rows = []
    for i, eps in enumerate(eps_values):
        params = ConstructionParams(n=n, eps=float(eps), T=T)
        x = stream(seed, "universality-inputs", i).standard_normal((n_samples, params.dim))
        rows.append({
            "eps": float(eps),
            "p_A": prob_A_eps(params, n_samples, stream(seed, "universality-event", i)),
            "ks": (check_distributional_convergence(params, n_samples, test_phi,
                                                    stream(seed, "universality-ks", i))
                   if n == 1 else float("nan")),
            "involution_residual": involution_residual(x, params),
        })
    return rows
