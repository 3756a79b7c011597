"""Adversarial training of an involutive generator as an MCMC proposal.

Each training step draws a batch of chains, fixes their auxiliary draws and
follows the linear proposal path ``phi_0 -> phi_1 -> ... -> phi_b`` obtained
by applying the generator repeatedly. Given the per-edge acceptance
probabilities ``A_i`` along that path, :func:`chain_distribution` computes the
exact probability that an accept/reject chain of ``b`` steps ends at each
``phi_i``. The critic score of the chain is then ``sum_i P(i) D(phi_i)``,
differentiable through both the states and the probabilities.

Even steps update the critic (ascending ``D(real) - E_P[D]`` then clipping
its weights), odd steps update the generator (ascending ``E_P[D]``).
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DomainError, NonFiniteDensity, NonFiniteLoss
from .involutive import InvolutiveNetwork, build_generator
from .invertible import MLP
from .rng import stream
from .targets import StandardNormal, TargetDensity, get_target

__all__ = ["TrainingConfig", "Trainer", "rollout_fixed_aux", "chain_distribution",
           "chain_distribution_bruteforce", "critic_expectation", "compute_losses",
           "training_step", "train",
           "make_discriminator"]

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    target: str = "mix2"
    target_params: dict = field(default_factory=dict)
    aux_dim: int = 31
    hidden_mult: int = 8
    b: int = 4
    training_steps: int = 5000
    batch: int = 64
    lr: float = 5e-5
    decay: float = 0.9
    eps: float = 1e-8
    clip: float = 0.01
    disc_hidden: int = 64
    init_sd: float = 2.0
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if self.clip <= 0:
            raise ValueError("clip bound w must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.training_steps < 0:
            raise ValueError("training_steps must be >= 0")
        if self.lr <= 0 or not 0 < self.decay < 1:
            raise ValueError("need lr > 0 and 0 < decay < 1")

    def make_target(self) -> TargetDensity:
        return get_target(self.target, **self.target_params)

    def to_dict(self):
        return asdict(self)


def make_discriminator(dim: int, hidden: int = 64) -> MLP:
    return MLP("D", [dim, hidden, 1])


def critic(disc: MLP, x, p) -> ad.Node:
    """Critic scores of a batch of states, shape ``(batch,)``."""
    return ad.sum(disc(x, p), axis=-1)


def rollout_fixed_aux(gen: InvolutiveNetwork, gen_params, target: TargetDensity,
                      aux: TargetDensity, phi0, b: int, rng: np.random.Generator):
    """Follow ``b`` generator applications from ``phi0`` with fresh, fixed auxiliaries.

    Returns the states ``[phi_0, ..., phi_b]`` and acceptance probabilities
    ``[A_0, ..., A_{b-1}]`` as nodes (each acceptance has shape ``(batch,)``).
    ``gen_params`` may hold leaf nodes, in which case everything is
    differentiable with respect to them.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    phi = ad.as_node(np.atleast_2d(phi0))
    batch, n = phi.value.shape
    phis, accepts = [phi], []
    logp = target.log_density_node(phi)
    for _ in range(b):
        pi = rng.standard_normal((batch, aux.dim))
        out = gen.apply_node(ad.concat([phi, pi]), gen_params)
        phi_next, pi_next = ad.split(out, [n, aux.dim])
        logp_next = target.log_density_node(phi_next)
        log_r = ad.add(ad.sub(logp_next, logp),
                       ad.sub(aux.log_density_node(pi_next), aux.log_density(pi)))
        if not np.all(np.isfinite(log_r.value)):
            raise NonFiniteDensity("non-finite log acceptance ratio during rollout")
        accepts.append(ad.exp(ad.min_with_zero(log_r)))
        phis.append(phi_next)
        phi, logp = phi_next, logp_next
    return phis, accepts


def chain_distribution(accepts, b: int | None = None):
    """Occupation probabilities ``P(0..b)`` after ``b`` accept/reject steps on a linear path.

    ``chi[j][t]`` is the probability of being at state ``j`` after ``t``
    steps. Row 0 is ``(1 - A_0)^t``; rows ``1..b-1`` follow
    ``chi[j][t] = chi[j-1][t-1] A_{j-1} + chi[j][t-1] (1 - A_j)``; the last
    state is absorbing, so ``chi[b][b] = prod_i A_i``, which keeps the
    probabilities summing to one.

    Works on nodes (result differentiable) or plain arrays/floats.
    """
    accepts = list(accepts)
    b = len(accepts) if b is None else b
    if len(accepts) != b:
        raise ValueError(f"need {b} acceptance probabilities, got {len(accepts)}")
    A = [ad.as_node(a) for a in accepts]
    stay = [ad.sub(1.0, a) for a in A]
    zero = ad.scale(A[0], 0.0)
    chi = [[None] * (b + 1) for _ in range(b + 1)]
    chi[0][0] = ad.add(zero, 1.0)
    for t in range(1, b + 1):
        chi[0][t] = ad.mul(chi[0][t - 1], stay[0])
    for j in range(1, b + 1):
        chi[j][j - 1] = zero
        for t in range(j, b + 1):
            moved = ad.mul(chi[j - 1][t - 1], A[j - 1])
            chi[j][t] = moved if j == b else ad.add(moved, ad.mul(chi[j][t - 1], stay[j]))
    return [chi[j][b] for j in range(b + 1)]


def chain_distribution_bruteforce(accepts) -> np.ndarray:
    """Enumerate all ``2^b`` accept/reject sequences; independent check of the recursion."""
    A = np.asarray(accepts, dtype=np.float64)
    b = A.size
    P = np.zeros(b + 1)
    for code in range(2 ** b):
        prob, j = 1.0, 0
        for t in range(b):
            take = (code >> t) & 1
            a = A[j] if j < b else 0.0
            prob *= a if take else 1.0 - a
            j += take
        if prob:
            P[j] += prob
    return P


def critic_expectation(disc: MLP, disc_params, phis, probs) -> ad.Node:
    """Per-chain ``sum_i P(i) D(phi_i)``, shape ``(batch,)``."""
    terms = [ad.mul(p, critic(disc, phi, disc_params)) for p, phi in zip(probs, phis)]
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total


class Trainer:
    """Mutable training state: generator, critic, optimizer accumulators."""

    def __init__(self, config: TrainingConfig, gen: InvolutiveNetwork | None = None):
        self.config = config
        self.target = config.make_target()
        if not self.target.has_sampler:
            raise ValueError(f"target {config.target!r} has no exact sampler")
        self.aux = StandardNormal(config.aux_dim)
        init_rng = stream(config.seed, "init")
        if gen is None:
            gen = build_generator(self.target.dim, config.aux_dim, init_rng, config.hidden_mult)
        self.gen = gen
        self.disc = make_discriminator(self.target.dim, config.disc_hidden)
        self.disc_params = ad.clamp_weights(
            ad.Parameters(self.disc.init_params(init_rng, zero_last=False)), config.clip)
        self.gen_state = None
        self.disc_state = None
        self.step_index = 0

    @property
    def gen_params(self) -> ad.Parameters:
        return self.gen.params


def compute_losses(trainer: Trainer, step_index: int, gen_params=None, disc_params=None):
    """Losses of training step ``step_index`` for the given (possibly leaf-node) parameters.

    Returns ``(d_loss, g_loss, accepts)``. The random draws depend only on the
    config seed and ``step_index``, so repeated calls see identical inputs.
    """
    cfg = trainer.config
    gen_params = trainer.gen_params if gen_params is None else gen_params
    disc_params = trainer.disc_params if disc_params is None else disc_params
    rng = stream(cfg.seed, "train", step_index)
    target, aux = trainer.target, trainer.aux
    real = target.sample(rng, cfg.batch)
    phi0 = cfg.init_sd * rng.standard_normal((cfg.batch, target.dim))
    phis, accepts = rollout_fixed_aux(trainer.gen, gen_params, target, aux, phi0, cfg.b, rng)
    probs = chain_distribution(accepts, cfg.b)
    fake = ad.mean(critic_expectation(trainer.disc, disc_params, phis, probs))
    real_score = ad.mean(critic(trainer.disc, real, disc_params))
    return ad.sub(real_score, fake), fake, accepts


def training_step(trainer: Trainer, step_index: int | None = None) -> dict:
    """One alternating update; returns the losses and mean acceptance of the batch."""
    cfg = trainer.config
    step_index = trainer.step_index if step_index is None else step_index
    update_disc = step_index % 2 == 0
    if update_disc:
        gen_p, disc_p = trainer.gen_params, trainer.disc_params.leaves()
    else:
        gen_p, disc_p = trainer.gen_params.leaves(), trainer.disc_params
    try:
        d_loss, g_loss, accepts = compute_losses(trainer, step_index, gen_p, disc_p)
    except (NonFiniteDensity, DomainError) as exc:
        log.warning("step %d skipped: %s", step_index, exc)
        trainer.step_index = step_index + 1
        return {"step": step_index, "d_loss": float("nan"), "g_loss": float("nan"),
                "mean_acceptance": float("nan"), "skipped": True}
    if not (np.isfinite(d_loss.value) and np.isfinite(g_loss.value)):
        raise NonFiniteLoss(f"non-finite loss at step {step_index}")

    if update_disc:
        grads = ad.backward(d_loss, disc_p)
        params, trainer.disc_state = ad.rmsprop_step(
            trainer.disc_params, grads, trainer.disc_state, cfg.lr, cfg.decay, cfg.eps,
            ascent=True)
        trainer.disc_params = ad.clamp_weights(params, cfg.clip)
    else:
        grads = ad.backward(g_loss, gen_p)
        params, trainer.gen_state = ad.rmsprop_step(
            trainer.gen_params, grads, trainer.gen_state, cfg.lr, cfg.decay, cfg.eps,
            ascent=True)
        trainer.gen = trainer.gen.with_params(trainer.gen.renormalize(params))
    trainer.step_index = step_index + 1
    mean_acc = float(np.mean([a.value for a in accepts]))
    return {"step": step_index, "d_loss": float(d_loss.value), "g_loss": float(g_loss.value),
            "mean_acceptance": mean_acc, "skipped": False}


LOG_FIELDS = ["step", "d_loss", "g_loss", "mean_acceptance"]


def train(config: TrainingConfig, out_dir=None, progress=None):
    """Run the full training loop.

    With ``out_dir`` set, writes ``train_log.csv`` and model checkpoints every
    ``checkpoint_every`` steps plus ``model.json`` at exit. Returns the
    trainer and the list of log rows.
    """
    from .serialization import save_model

    trainer = Trainer(config)
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    fh = writer = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
    start = time.perf_counter()
    try:
        for s in range(config.training_steps):
            row = training_step(trainer, s)
            rows.append(row)
            if writer is not None:
                writer.writerow([row["step"]] + [repr(row[k]) for k in LOG_FIELDS[1:]])
            if out is not None and config.checkpoint_every and (s + 1) % config.checkpoint_every == 0:
                save_model(out / "checkpoints" / f"step_{s + 1:06d}.json", trainer.gen,
                           _metadata(config, s + 1))
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_model(out / "model.json", trainer.gen, _metadata(config, config.training_steps))
    log.info("trained %d steps in %.1fs", config.training_steps, time.perf_counter() - start)
    return trainer, rows


def _metadata(config: TrainingConfig, steps: int) -> dict:
    return {"target": config.target, "target_params": config.target_params,
            "steps": steps, "seed": config.seed, "b": config.b, "init_sd": config.init_sd,
            "aux_dim": config.aux_dim}
