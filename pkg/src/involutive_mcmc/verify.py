"""Property suites run by ``involutive-mcmc verify`` and the acceptance tests.

Each suite returns a list of :class:`Check` records with the measured value
and its threshold; nothing here raises on a failed property.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import universality as uni
from .involutive import build_generator, log_abs_det_jacobian_numeric, random_network
from .kernels import gaussian_shift_kernel, hmc_kernel, run_chain
from .rng import stream
from .targets import mix2_1d, std_normal
from .training import (TrainingConfig, Trainer, chain_distribution,
                       chain_distribution_bruteforce, compute_losses)

__all__ = ["Check", "SUITES", "run_suite", "format_check", "involution_suite", "volume_suite",
           "grad_suite", "chi_suite", "balance_suite", "universality_suite",
           "reversibility_residual", "finite_difference_check"]


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


def _le(name, value, threshold, detail=""):
    return Check(name, float(value), float(threshold), bool(value <= threshold), detail)


def format_check(c: Check) -> str:
    tag = "PASS" if c.passed else "FAIL"
    extra = f" [{c.detail}]" if c.detail else ""
    return f"{tag} {c.name}: measured {c.value:.3e}, threshold {c.threshold:.3e}{extra}"


# ---------------------------------------------------------------- involution / volume


def involution_suite(networks: int = 50, inputs: int = 10_000, seed: int = 0,
                     min_dim: int = 4, max_dim: int = 64, max_depth: int = 7) -> list[Check]:
    worst, worst_desc = 0.0, ""
    for i in range(networks):
        rng = stream(seed, "verify-involution", i)
        dim = int(rng.integers(min_dim, max_dim + 1))
        depth = int(rng.integers(1, max_depth + 1))
        net = random_network(dim, depth, rng)
        x = rng.standard_normal((inputs, dim))
        res = float(np.max(np.abs(net(net(x)) - x)))
        if res >= worst:
            worst, worst_desc = res, f"dim {dim}, depth {depth}"
    checks = [_le(f"involution: {networks} random networks x {inputs} inputs", worst, 1e-9,
                  f"worst {worst_desc}")]
    gen = build_generator(2, 30, stream(seed, "verify-generator"), zero_last=False)
    x = stream(seed, "verify-generator-inputs").standard_normal((inputs, gen.dim))
    checks.append(_le("involution: generator with random weights",
                      np.max(np.abs(gen(gen(x)) - x)), 1e-9))
    return checks


def volume_suite(networks: int = 20, points: int = 20, seed: int = 0,
                 max_dim: int = 10, h: float = 1e-6) -> list[Check]:
    worst = 0.0
    for i in range(networks):
        rng = stream(seed, "verify-volume", i)
        dim = int(rng.integers(4, max_dim + 1))
        net = random_network(dim, int(rng.integers(1, 8)), rng)
        for _ in range(points):
            x = rng.standard_normal(dim)
            worst = max(worst, abs(log_abs_det_jacobian_numeric(net, x, h=h)))
    return [_le(f"volume: |log|det J|| over {networks} networks x {points} points", worst, 1e-5)]


# ---------------------------------------------------------------- gradients


def finite_difference_check(fn, inputs, h: float = 1e-6, directions: int = 3, rng=None):
    """Relative error between the autodiff and central-difference directional derivatives.

    ``fn`` maps a list of leaf nodes to a scalar node; ``inputs`` is a list
    of arrays. Returns the worst relative error over random directions.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    leaves = [ad.variable(np.asarray(a, dtype=np.float64)) for a in inputs]
    grads = ad.backward(fn(leaves), leaves)
    worst = 0.0
    for _ in range(directions):
        dirs = [rng.standard_normal(np.shape(a)) for a in inputs]
        exact = float(sum(np.sum(g * d) for g, d in zip(grads, dirs)))
        plus = fn([ad.constant(a + h * d) for a, d in zip(inputs, dirs)]).value
        minus = fn([ad.constant(a - h * d) for a, d in zip(inputs, dirs)]).value
        fd = float((plus - minus) / (2 * h))
        worst = max(worst, abs(exact - fd) / max(abs(fd), abs(exact), 1e-8))
    return worst


def _away(rng, shape, kink, gap=0.1):
    """Random values at least ``gap`` from ``kink``."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x - kink) < gap, x + np.sign(x - kink + 1e-300) * gap, x)


def _primitive_cases(rng):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    pos = rng.uniform(0.5, 2.0, (4, 3))
    w = rng.standard_normal((5, 3))
    perm = rng.permutation(3)

    def weighted(node):
        c = ad.constant(np.linspace(-1.0, 2.0, node.value.size).reshape(node.value.shape))
        return ad.sum(ad.mul(node, c))

    return {
        "add": (lambda x: weighted(ad.add(x[0], x[1])), [a, b]),
        "sub": (lambda x: weighted(ad.sub(x[0], x[1])), [a, b]),
        "mul": (lambda x: weighted(ad.mul(x[0], x[1])), [a, b]),
        "div": (lambda x: weighted(ad.div(x[0], x[1])), [a, pos]),
        "negate": (lambda x: weighted(ad.negate(x[0])), [a]),
        "scale": (lambda x: weighted(ad.scale(x[0], -2.5)), [a]),
        "square": (lambda x: weighted(ad.square(x[0])), [a]),
        "relu": (lambda x: weighted(ad.relu(x[0])), [_away(rng, (4, 3), 0.0)]),
        "sigmoid": (lambda x: weighted(ad.sigmoid(x[0])), [a]),
        "tanh": (lambda x: weighted(ad.tanh(x[0])), [a]),
        "exp": (lambda x: weighted(ad.exp(x[0])), [a]),
        "log": (lambda x: weighted(ad.log(x[0])), [pos]),
        "min_with_one": (lambda x: weighted(ad.min_with_one(x[0])), [_away(rng, (4, 3), 1.0)]),
        "min_with_zero": (lambda x: weighted(ad.min_with_zero(x[0])), [_away(rng, (4, 3), 0.0)]),
        "logsumexp": (lambda x: weighted(ad.logsumexp(x[0])), [a]),
        "matvec": (lambda x: weighted(ad.matvec(x[0], x[1])), [w, a]),
        "concat": (lambda x: weighted(ad.concat([x[0], x[1]])), [a, b]),
        "split": (lambda x: weighted(ad.mul(*ad.split(x[0], [1, 2])[:1],
                                            ad.split(x[0], [1, 2])[1])), [a]),
        "permute": (lambda x: weighted(ad.permute(ad.mul(x[0], x[0]), perm)), [a]),
        "sum": (lambda x: ad.sum(ad.mul(ad.sum(x[0], axis=0), ad.sum(x[0], axis=0))), [a]),
        "mean": (lambda x: ad.mean(ad.mul(x[0], x[1])), [a, b]),
    }


def _end_to_end(seed: int, h: float):
    """Relative errors of the D_loss and G_loss gradients on a small random generator."""
    cfg = TrainingConfig(target="mix2", aux_dim=3, hidden_mult=2, b=3, batch=8, seed=seed,
                         clip=0.5, disc_hidden=8)
    gen = build_generator(1, 3, stream(seed, "verify-grad-gen"), hidden_mult=2, zero_last=False)
    trainer = Trainer(cfg, gen=gen)
    # a step whose acceptance ratios are all away from the min-kink
    for step_index in range(100):
        _, _, accepts = compute_losses(trainer, step_index)
        if all(np.all((a.value == 1.0) | (a.value < 1.0 - 1e-3)) for a in accepts):
            break
    names_g = sorted(trainer.gen_params)
    names_d = sorted(trainer.disc_params)

    def g_fn(nodes):
        p = dict(zip(names_g, nodes))
        return compute_losses(trainer, step_index, p, trainer.disc_params)[1]

    def d_fn(nodes):
        p = dict(zip(names_d, nodes))
        return compute_losses(trainer, step_index, trainer.gen_params, p)[0]

    rng = stream(seed, "verify-grad-dirs")
    g_err = finite_difference_check(g_fn, [trainer.gen_params[n] for n in names_g], h, rng=rng)
    d_err = finite_difference_check(d_fn, [trainer.disc_params[n] for n in names_d], h, rng=rng)
    return d_err, g_err


def grad_suite(seed: int = 0, h: float = 1e-6) -> list[Check]:
    rng = stream(seed, "verify-grad")
    checks = []
    for name, (fn, inputs) in _primitive_cases(rng).items():
        checks.append(_le(f"grad: {name}", finite_difference_check(fn, inputs, h, rng=rng), 1e-4))
    d_err, g_err = _end_to_end(seed, h)
    checks.append(_le("grad: end-to-end D_loss", d_err, 1e-3))
    checks.append(_le("grad: end-to-end G_loss", g_err, 1e-3))
    return checks


# ---------------------------------------------------------------- chi DP


def chi_suite(vectors: int = 200, max_b: int = 10, seed: int = 0) -> list[Check]:
    rng = stream(seed, "verify-chi")
    worst_diff = worst_norm = 0.0
    for _ in range(vectors):
        b = int(rng.integers(1, max_b + 1))
        A = rng.random(b)
        if rng.random() < 0.2:  # exercise exact 0/1 acceptances
            A[rng.random(b) < 0.3] = rng.integers(0, 2)
        P = np.array([p.value for p in chain_distribution(A, b)], dtype=np.float64)
        worst_diff = max(worst_diff, float(np.max(np.abs(P - chain_distribution_bruteforce(A)))))
        worst_norm = max(worst_norm, abs(float(P.sum()) - 1.0))
    return [_le(f"chi: DP vs 2^b enumeration ({vectors} vectors, b <= {max_b})", worst_diff, 1e-12),
            _le("chi: probabilities sum to one", worst_norm, 1e-12)]


# ---------------------------------------------------------------- detailed balance


def reversibility_residual(before, after, edges):
    """``max |F_ij - F_ji|`` of the binned joint transition frequencies, and its standard error.

    The standard error uses ``sqrt(N_ij + N_ji) / N`` (the counting error of a
    difference of two transition counts) at the pair where it is largest.
    """
    nb = len(edges) - 1
    i = np.clip(np.searchsorted(edges, before, side="right") - 1, 0, nb - 1)
    j = np.clip(np.searchsorted(edges, after, side="right") - 1, 0, nb - 1)
    counts = np.zeros((nb, nb))
    np.add.at(counts, (i, j), 1.0)
    n = counts.sum()
    diff = np.abs(counts - counts.T) / n
    se = np.sqrt(counts + counts.T) / n
    return float(diff.max()), float(se.max())


def balance_suite(steps: int = 100_000, seed: int = 0, chains: int = 100,
                  tv_bins: int = 50, rev_bins: int = 64) -> list[Check]:
    from .diagnostics import tv_distance_histogram

    target = mix2_1d()
    per_chain = max(1, steps // chains)
    init = target.sample(stream(seed, "verify-balance-init"), chains)
    run = run_chain(gaussian_shift_kernel(target, 0.3), init, per_chain, seed)
    tv = tv_distance_histogram(run.states, target, tv_bins, value_range=(-0.8, 0.8))
    edges = np.linspace(-0.8, 0.8, rev_bins + 1)
    resid, se = reversibility_residual(run.previous_states[..., 0].ravel(),
                                       run.states[..., 0].ravel(), edges)
    checks = [_le(f"balance: gaussian-shift(0.3) on mix2 histogram TV ({chains * per_chain} draws)",
                  tv, 0.05),
              _le("balance: binned reversibility residual", resid, 3 * se, f"3 SE = {3 * se:.2e}")]

    # HMC on N(0, 1): independent chains from an off-centre start, final states only
    normal = std_normal(1)
    start = 1.5 + 0.5 * stream(seed, "verify-hmc-init").standard_normal((steps, 1))
    hmc = run_chain(hmc_kernel(normal, 0.25, 5), start, 30, seed)
    x = hmc.states[-1, :, 0]
    n = x.size
    mean, var = float(x.mean()), float(x.var(ddof=1))
    checks.append(_le("balance: HMC on N(0,1) |mean| / SE", abs(mean) / np.sqrt(1 / n), 3.0))
    checks.append(_le("balance: HMC on N(0,1) |var - 1| / SE", abs(var - 1) / np.sqrt(2 / n), 3.0))
    return checks


# ---------------------------------------------------------------- universality


def universality_suite(samples: int = 10_000, seed: int = 0,
                       eps_values=(0.5, 0.1, 0.02)) -> list[Check]:
    checks = []
    worst_inv = 0.0
    for i, eps in enumerate(tuple(eps_values) + (0.01,)):
        for n in (1, 2):
            p = uni.ConstructionParams(n=n, eps=eps)
            x = stream(seed, "verify-uni-inv", 10 * i + n).standard_normal((samples, p.dim))
            worst_inv = max(worst_inv, uni.involution_residual(4.0 * x, p))
    checks.append(_le("universality: I_eps double application", worst_inv, 1e-9))

    worst_id = 0.0
    for n in (1, 2):
        p = uni.ConstructionParams(n=n, eps=0.05)
        rng = stream(seed, "verify-uni-cond", n)
        pi = rng.standard_normal((2 * samples, n + 6))
        pi = pi[uni.event_A_eps(pi, p)][:samples]
        phi = rng.uniform(-p.r, p.r, (len(pi), n))
        out = uni.I_eps(np.concatenate([phi, pi], axis=-1), p)[:, :n]
        worst_id = max(worst_id, float(np.max(np.abs(out - uni.conditioned_output(phi, pi, p)))))
    checks.append(_le("universality: conditioned identity on A_eps", worst_id, 1e-9))

    ks = uni.check_distributional_convergence(uni.ConstructionParams(n=1, eps=0.01), samples,
                                              rng=stream(seed, "verify-uni-ks"))
    checks.append(_le("universality: KS(I_eps[phi], T[phi]) at eps=0.01", ks, 0.05))

    probs = [uni.prob_A_eps(uni.ConstructionParams(n=1, eps=e), samples,
                            stream(seed, "verify-uni-event", i)) for i, e in enumerate(eps_values)]
    increasing = all(a <= b for a, b in zip(probs, probs[1:])) and probs[-1] > probs[0]
    checks.append(Check("universality: P(A_eps) increasing toward 1", probs[-1], 0.99,
                        increasing and probs[-1] >= 0.99,
                        "P = " + ", ".join(f"{v:.4f}" for v in probs)))
    return checks


SUITES = {
    "involution": involution_suite,
    "volume": volume_suite,
    "grad": grad_suite,
    "chi": chi_suite,
    "balance": balance_suite,
    "universality": universality_suite,
}


def run_suite(name: str, seed: int = 0, **sizes) -> list[Check]:
    """Run one suite (or ``all``). ``sizes`` may set ``networks``, ``inputs`` and ``steps``."""
    if name == "all":
        return [c for n in SUITES for c in run_suite(n, seed, **sizes)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join([*SUITES, 'all'])}")
    kwargs = {"seed": seed}
    if name == "involution":
        kwargs.update(networks=sizes.get("networks", 50), inputs=sizes.get("inputs", 10_000))
    elif name == "balance":
        kwargs.update(steps=sizes.get("steps", 100_000))
    return SUITES[name](**kwargs)
