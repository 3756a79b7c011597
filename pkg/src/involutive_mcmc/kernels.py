"""Metropolis-Hastings transitions driven by volume-preserving involutions.

One transition draws an auxiliary ``pi``, maps ``(phi, pi) -> (phi', pi')``
with an involution ``f`` and accepts with probability

    min(1, p(phi') q(pi') / (p(phi) q(pi)))

evaluated in log space. Because ``f`` is involutive and preserves volume no
Jacobian or reverse-proposal term is needed. The sampling loop scores the
*proposed* state in the numerator; the printed pseudocode that reuses the
current state there would make every ratio independent of the proposal.

All kernels are batched over chains: states have shape ``(chains, n)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NotVolumePreserving, ShapeError
from .involutive import InvolutiveNetwork
from .invertible import InvertibleNet
from .rng import stream
from .targets import StandardNormal, TargetDensity

__all__ = ["InvolutiveKernel", "ChainState", "TransitionRecord", "ChainRun", "init_state",
           "step", "run_chain", "gaussian_shift_kernel", "hmc_kernel",
           "nice_symmetric_kernel", "neural_kernel", "write_records_csv",
           "involution_residual", "DEBUG_MONITOR_RATE", "RELEASE_MONITOR_RATE"]

log = logging.getLogger(__name__)

DEBUG_MONITOR_RATE = 1.0
RELEASE_MONITOR_RATE = 0.01


class InvolutiveKernel:
    """MH kernel from a volume-preserving involution on the joint (state, aux) space.

    ``involution`` maps an array of shape ``(chains, n + m)`` to the same
    shape. ``certificate`` records why it is a volume-preserving involution
    (a grammar-checked network or a closed form).
    """

    def __init__(self, involution, target: TargetDensity, aux: TargetDensity, name: str,
                 certificate: str, monitor_rate: float = RELEASE_MONITOR_RATE):
        if not 0 <= monitor_rate <= 1:
            raise ValueError("monitor_rate must lie in [0, 1]")
        self.involution = involution
        self.target = target
        self.aux = aux
        self.name = name
        self.certificate = certificate
        self.monitor_rate = monitor_rate
        self.state_dim = target.dim
        self.aux_dim = aux.dim

    def propose(self, phi: np.ndarray, pi: np.ndarray):
        out = self.involution(np.concatenate([phi, pi], axis=-1))
        return out[..., : self.state_dim], out[..., self.state_dim:]

    def log_ratio(self, phi, pi, phi_new, pi_new) -> np.ndarray:
        with np.errstate(invalid="ignore", over="ignore"):
            return ((self.target.log_density(phi_new) - self.target.log_density(phi))
                    + (self.aux.log_density(pi_new) - self.aux.log_density(pi)))

    def monitor_period(self) -> int:
        return 0 if self.monitor_rate == 0 else max(1, round(1 / self.monitor_rate))


def involution_residual(kernel: InvolutiveKernel, z: np.ndarray) -> float:
    """Max-norm distance between ``f(f(z))`` and ``z``; ignores non-finite rows."""
    with np.errstate(invalid="ignore", over="ignore"):
        back = kernel.involution(kernel.involution(z))
        err = np.abs(back - z)
    err = err[np.all(np.isfinite(err), axis=-1)]
    return float(err.max()) if err.size else 0.0


@dataclass
class ChainState:
    """Batched chain state. ``aux_streams``/``accept_streams`` hold one generator per chain."""

    phi: np.ndarray
    aux_streams: list
    accept_streams: list
    chain_ids: np.ndarray
    step: int = 0
    accepted: np.ndarray = field(default=None)
    max_residual: float = 0.0
    nonfinite: int = 0

    def __post_init__(self):
        if self.accepted is None:
            self.accepted = np.zeros(self.phi.shape[0], dtype=np.int64)

    @property
    def acceptance_rate(self) -> np.ndarray:
        return self.accepted / max(self.step, 1)


@dataclass
class TransitionRecord:
    phi: np.ndarray
    proposal: np.ndarray
    log_ratio: np.ndarray
    accepted: np.ndarray
    step: int


@dataclass
class ChainRun:
    """Records of ``steps`` transitions for every chain; arrays are (steps, chains, ...)."""

    init: np.ndarray
    states: np.ndarray
    proposals: np.ndarray
    log_ratio: np.ndarray
    accepted: np.ndarray
    chain_ids: np.ndarray
    max_residual: float
    nonfinite: int

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def previous_states(self) -> np.ndarray:
        return np.concatenate([self.init[None], self.states[:-1]], axis=0)


def init_state(kernel: InvolutiveKernel, init, seed: int, start_chain: int = 0) -> ChainState:
    """Chain ``i`` draws auxiliaries from stream (seed, "aux", start_chain + i)."""
    phi = np.array(init, dtype=np.float64, ndmin=2)
    if phi.shape[1] != kernel.state_dim:
        raise ShapeError(f"initial states need {kernel.state_dim} columns, got {phi.shape}")
    ids = np.arange(start_chain, start_chain + phi.shape[0])
    return ChainState(phi=phi,
                      aux_streams=[stream(seed, "aux", i) for i in ids],
                      accept_streams=[stream(seed, "accept", i) for i in ids],
                      chain_ids=ids)


def _transition(kernel, phi, pi, log_u, step_index):
    phi_new, pi_new = kernel.propose(phi, pi)
    lr = kernel.log_ratio(phi, pi, phi_new, pi_new)
    bad = np.isnan(lr) | (lr == -np.inf) | ~np.all(np.isfinite(phi_new), axis=-1)
    lr = np.where(np.isnan(lr), -np.inf, lr)
    accept = (log_u < lr) & ~bad
    n_bad = int(bad.sum())
    if n_bad:
        log.warning("%s step %d: %d proposal(s) with non-finite density rejected",
                    kernel.name, step_index, n_bad)
    residual = 0.0
    period = kernel.monitor_period()
    if period and step_index % period == 0:
        residual = involution_residual(kernel, np.concatenate([phi, pi], axis=-1))
    return phi_new, lr, accept, n_bad, residual


def step(kernel: InvolutiveKernel, state: ChainState):
    """Advance every chain by one transition; returns ``(new_state, record)``."""
    pi = np.stack([g.standard_normal(kernel.aux_dim) for g in state.aux_streams])
    log_u = np.log(np.array([g.random() for g in state.accept_streams]))
    index = state.step + 1
    proposal, lr, accept, n_bad, residual = _transition(kernel, state.phi, pi, log_u, index)
    phi = np.where(accept[:, None], proposal, state.phi)
    record = TransitionRecord(state.phi, proposal, lr, accept, index)
    new = replace(state, phi=phi, step=index, accepted=state.accepted + accept,
                  max_residual=max(state.max_residual, residual),
                  nonfinite=state.nonfinite + n_bad)
    return new, record


def run_chain(kernel: InvolutiveKernel, init, steps: int, seed: int,
              start_chain: int = 0) -> ChainRun:
    """Run ``steps`` transitions for each row of ``init``.

    Equivalent to calling :func:`step` repeatedly; random numbers are drawn
    per chain in blocks, which consumes each stream identically.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = init_state(kernel, init, seed, start_chain)
    c, n = state.phi.shape
    pis = np.stack([g.standard_normal((steps, kernel.aux_dim)) for g in state.aux_streams], axis=1)
    log_us = np.log(np.stack([g.random(steps) for g in state.accept_streams], axis=1))
    states = np.empty((steps, c, n))
    proposals = np.empty((steps, c, n))
    lrs = np.empty((steps, c))
    accepted = np.empty((steps, c), dtype=bool)
    phi = state.phi
    max_res, nonfinite = 0.0, 0
    for t in range(steps):
        proposal, lr, accept, n_bad, residual = _transition(kernel, phi, pis[t], log_us[t], t + 1)
        phi = np.where(accept[:, None], proposal, phi)
        states[t], proposals[t], lrs[t], accepted[t] = phi, proposal, lr, accept
        max_res = max(max_res, residual)
        nonfinite += n_bad
    return ChainRun(state.phi, states, proposals, lrs, accepted, state.chain_ids,
                    max_res, nonfinite)


# ---------------------------------------------------------------- kernels


def gaussian_shift_kernel(target: TargetDensity, sd: float, **kw) -> InvolutiveKernel:
    """``(phi, pi) -> (phi + sd*pi, -pi)`` with standard-normal ``pi``."""
    if sd <= 0:
        raise ValueError("sd must be positive")
    n = target.dim

    def f(z):
        phi, pi = z[..., :n], z[..., n:]
        return np.concatenate([phi + sd * pi, -pi], axis=-1)

    return InvolutiveKernel(f, target, StandardNormal(n), f"gaussian_shift(sd={sd})",
                            "closed-form", **kw)


def hmc_kernel(target: TargetDensity, step_size: float, leapfrog_steps: int,
               **kw) -> InvolutiveKernel:
    """Leapfrog integration followed by momentum negation."""
    if step_size <= 0 or leapfrog_steps < 1:
        raise ValueError("need step_size > 0 and leapfrog_steps >= 1")
    n = target.dim
    eps = float(step_size)

    def f(z):
        q, p = z[..., :n].copy(), z[..., n:].copy()
        with np.errstate(invalid="ignore", over="ignore"):
            p += 0.5 * eps * target.grad_log_density(q)
            for i in range(leapfrog_steps):
                q += eps * p
                if i < leapfrog_steps - 1:
                    p += eps * target.grad_log_density(q)
            p += 0.5 * eps * target.grad_log_density(q)
        return np.concatenate([q, -p], axis=-1)

    return InvolutiveKernel(f, target, StandardNormal(n),
                            f"hmc(step={step_size}, L={leapfrog_steps})", "closed-form", **kw)


def nice_symmetric_kernel(net: InvertibleNet, params, target: TargetDensity,
                          **kw) -> InvolutiveKernel:
    """``(phi, pi) -> (f(phi), -pi)`` if ``pi > 0`` else ``(f^-1(phi), -pi)``; scalar ``pi``."""
    if not net.volume_preserving:
        raise NotVolumePreserving("symmetric proposal needs a volume-preserving net")
    if net.dim != target.dim:
        raise ShapeError(f"net dimension {net.dim} != target dimension {target.dim}")
    n = target.dim

    def f(z):
        phi, pi = z[..., :n], z[..., n:]
        fwd = net.forward(phi, params).value
        bwd = net.inverse(phi, params).value
        return np.concatenate([np.where(pi > 0, fwd, bwd), -pi], axis=-1)

    return InvolutiveKernel(f, target, StandardNormal(1), "nice_symmetric", "closed-form", **kw)


def neural_kernel(gen: InvolutiveNetwork, target: TargetDensity,
                  aux: TargetDensity | None = None, **kw) -> InvolutiveKernel:
    if not isinstance(gen, InvolutiveNetwork):
        raise TypeError("neural_kernel needs a grammar-checked InvolutiveNetwork")
    if not gen.volume_preserving:
        raise NotVolumePreserving("generator contains a non-volume-preserving block")
    aux = StandardNormal(gen.dim - target.dim) if aux is None else aux
    if gen.dim != target.dim + aux.dim:
        raise ShapeError(f"generator dim {gen.dim} != {target.dim} + {aux.dim}")
    return InvolutiveKernel(gen, target, aux, "neural", "grammar", **kw)


# ---------------------------------------------------------------- output


def write_records_csv(path, run: ChainRun, precision=None):
    """Columns: chain, step, accepted, log_ratio, x0..x{n-1} (state after the step)."""
    steps, c, n = run.states.shape
    fmt = repr if precision is None else (lambda v: f"{v:.{precision}g}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "step", "accepted", "log_ratio"] + [f"x{i}" for i in range(n)])
        for j in range(c):
            cid = int(run.chain_ids[j])
            for t in range(steps):
                w.writerow([cid, t + 1, int(run.accepted[t, j]), fmt(float(run.log_ratio[t, j]))]
                           + [fmt(float(v)) for v in run.states[t, j]])
