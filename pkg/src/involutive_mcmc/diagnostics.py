"""Sampler diagnostics over archives of chain states.

All functions are pure: the same archive always gives bit-identical output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVariance, ShapeError
from .kernels import ChainRun
from .targets import TargetDensity

__all__ = ["ChainArchive", "autocorrelation", "expected_nll", "tv_distance_histogram",
           "cross_mode_rate", "mode_occupancy", "read_records_csv"]


@dataclass
class ChainArchive:
    """States after each step, shape ``(steps, chains, n)``, plus accept flags ``(steps, chains)``.

    ``init`` (the states before step 1) is optional; records read back from
    CSV do not carry it.
    """

    states: np.ndarray
    accepted: np.ndarray
    init: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[:, :, None]
        self.accepted = np.asarray(self.accepted, dtype=bool)
        if self.states.ndim != 3 or self.accepted.shape != self.states.shape[:2]:
            raise ShapeError("archive must be rectangular: states (steps, chains, n), "
                             "accepted (steps, chains)")

    @classmethod
    def from_run(cls, run: ChainRun, **metadata) -> ChainArchive:
        return cls(run.states, run.accepted, run.init, dict(metadata))

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    @property
    def chains(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def transitions(self):
        """``(before, after, accepted)`` for every transition whose start state is known."""
        if self.init is not None:
            before = np.concatenate([self.init[None], self.states[:-1]], axis=0)
            return before, self.states, self.accepted
        return self.states[:-1], self.states[1:], self.accepted[1:]


def autocorrelation(archive: ChainArchive, coordinate: int = 0, max_lag: int = 50) -> np.ndarray:
    """Mean over chains of the biased (1/N), mean-subtracted autocorrelation at lags 0..max_lag."""
    x = archive.states[:, :, coordinate]
    n = x.shape[0]
    if n <= max_lag:
        raise ValueError(f"chain length {n} must exceed max_lag {max_lag}")
    x = x - x.mean(axis=0)
    var = np.mean(x * x, axis=0)
    if np.any(var == 0):
        raise DegenerateVariance("a chain is constant in the requested coordinate")
    acf = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        acf[lag] = np.mean(np.sum(x[: n - lag] * x[lag:], axis=0) / n / var)
    acf[0] = 1.0
    return acf


def expected_nll(archive: ChainArchive, target: TargetDensity, reference_samples=None):
    """Mean negative log density per step, and the value for exact target samples.

    Returns ``(steps, nll, reference_nll)`` where ``steps`` runs from 1.
    ``reference_samples`` defaults to none, in which case the reference is
    ``nan``.
    """
    s, c, n = archive.states.shape
    logp = target.log_density(archive.states.reshape(-1, n)).reshape(s, c)
    nll = -logp.mean(axis=1)
    ref = float("nan")
    if reference_samples is not None:
        ref = float(-np.mean(target.log_density(np.asarray(reference_samples))))
    return np.arange(1, s + 1), nll, ref


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _bin_masses(target: TargetDensity, coordinate: int, edges: np.ndarray) -> np.ndarray:
    """Target marginal mass of each bin by 20-point Gauss-Legendre quadrature."""
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    pts = 0.5 * (hi + lo)[:, None] + half[:, None] * _GL_NODES
    return half * (target.marginal_pdf(coordinate, pts) @ _GL_WEIGHTS)


def tv_distance_histogram(samples, target: TargetDensity, bins: int = 200, coordinate: int = 0,
                          value_range=None) -> float:
    """Total variation between a 1-D histogram of ``samples`` and the target marginal.

    Mass outside ``value_range`` (default: the target's essential support)
    forms one extra bin on each side.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim > 1:
        x = x.reshape(-1, x.shape[-1])[:, coordinate]
    if x.size == 0:
        raise ValueError("empty sample window")
    if bins < 10:
        raise ValueError("need at least 10 bins")
    lo, hi = target.marginal_range(coordinate) if value_range is None else value_range
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    emp = np.concatenate([[np.sum(x < lo)], counts, [np.sum(x > hi)]]) / x.size
    inner = _bin_masses(target, coordinate, edges)
    below = float(target.marginal_cdf(coordinate, lo))
    above = float(1.0 - target.marginal_cdf(coordinate, hi))
    ref = np.concatenate([[below], inner, [above]])
    return float(min(1.0, 0.5 * np.sum(np.abs(emp - ref))))


def cross_mode_rate(archive: ChainArchive, mode_of) -> float:
    """Fraction of accepted transitions whose endpoints lie in different modes."""
    before, after, acc = archive.transitions()
    n = archive.dim
    mb = np.asarray(mode_of(before.reshape(-1, n)))
    ma = np.asarray(mode_of(after.reshape(-1, n)))
    acc = acc.reshape(-1)
    if not acc.any():
        return 0.0
    return float(np.mean(mb[acc] != ma[acc]))


def mode_occupancy(samples, mode_of, n_modes: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    modes = np.asarray(mode_of(x.reshape(-1, x.shape[-1])))
    return np.bincount(modes, minlength=n_modes) / modes.size


def read_records_csv(path) -> ChainArchive:
    """Load transition records written by :func:`~involutive_mcmc.kernels.write_records_csv`.

    Rows must cover every (chain, step) pair exactly once; malformed rows
    raise ``ValueError`` naming the line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["chain", "step", "accepted", "log_ratio"]:
            raise ValueError(f"{path}: line 1: expected header chain,step,accepted,log_ratio,x0,...")
        n = len(header) - 4
        if n < 1 or header[4:] != [f"x{i}" for i in range(n)]:
            raise ValueError(f"{path}: line 1: malformed state columns")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n + 4:
                raise ValueError(f"{path}: line {lineno}: expected {n + 4} fields, got {len(row)}")
            try:
                chain, step, acc = int(row[0]), int(row[1]), int(row[2])
                x = [float(v) for v in row[4:]]
                float(row[3])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if acc not in (0, 1) or step < 1 or not np.all(np.isfinite(x)):
                raise ValueError(f"{path}: line {lineno}: invalid values")
            if (chain, step) in rows:
                raise ValueError(f"{path}: line {lineno}: duplicate record for chain {chain} "
                                 f"step {step}")
            rows[(chain, step)] = (acc, x)
    if not rows:
        raise ValueError(f"{path}: no records")
    chains = sorted({c for c, _ in rows})
    steps = max(s for _, s in rows)
    if len(rows) != len(chains) * steps:
        raise ValueError(f"{path}: archive is not rectangular")
    states = np.empty((steps, len(chains), n))
    accepted = np.empty((steps, len(chains)), dtype=bool)
    for j, c in enumerate(chains):
        for s in range(1, steps + 1):
            acc, x = rows[(c, s)]
            states[s - 1, j] = x
            accepted[s - 1, j] = bool(acc)
    return ChainArchive(states, accepted, metadata={"chains": chains})
