"""Small worked examples per module, each checked against a hand-derived value."""
import numpy as np
import pytest
from scipy import stats

from involutive_mcmc import autodiff as ad
from involutive_mcmc import diagnostics as D
from involutive_mcmc import involutive as I
from involutive_mcmc import invertible as V
from involutive_mcmc import kernels as K
from involutive_mcmc import targets as T
from involutive_mcmc import training as TR
from involutive_mcmc import universality as U
from involutive_mcmc.rng import stream


def identity_net(dim, name="s"):
    net = V.InvertibleNet([V.Shift(name, dim)])
    return net, ad.Parameters(net.init_params(None))


# ---------------------------------------------------------------- invertible / involutive


def test_single_coupling_inverse_is_subtraction_of_shift():
    rng = np.random.default_rng(0)
    layer = V.AdditiveCoupling("c", 4)
    p = ad.Parameters(layer.init_params(rng, zero_last=False))
    y = rng.standard_normal((6, 4))
    shift = layer.forward(y, p).value - y  # shift-net evaluated at the kept half of y
    np.testing.assert_allclose(layer.inverse(y, p).value, y - shift, atol=1e-15)


def test_coupling_net_volume_at_dim_6():
    rng = np.random.default_rng(1)
    net = V.build_invertible_net("g", 6, rng, hidden_mult=2)
    p = ad.Parameters(net.init_params(rng, zero_last=False))
    f = lambda z: net.forward(z[None], p).value[0]
    assert abs(I.log_abs_det_jacobian_numeric(f, rng.standard_normal(6), h=1e-5)) < 1e-5


def test_roundtrip_on_many_points():
    rng = np.random.default_rng(2)
    net = V.build_invertible_net("g", 8, rng, hidden_mult=2)
    p = ad.Parameters(net.init_params(rng, zero_last=False))
    x = rng.standard_normal((10_000, 8))
    assert np.abs(net.inverse(net.forward(x, p), p).value - x).max() <= 1e-9


def test_matrix_block_reflects_first_axis():
    blk = I.MatrixBlock("m", 2)
    e1 = np.array([1.0, 0.0])
    out = blk.apply(np.array([[3.0, 5.0]]), {"m.v": e1, "m.w": e1}).value
    np.testing.assert_array_equal(out, [[-3.0, 5.0]])


def test_function_block_with_identity_swaps_halves():
    g, p = identity_net(1)
    net = I.InvolutiveNetwork(I.FunctionBlock(g), p)
    np.testing.assert_array_equal(net(np.array([[1.5, -2.0]])), [[-2.0, 1.5]])


def test_deep_composition_at_dim_32():
    rng = np.random.default_rng(3)
    f1 = I.FunctionBlock(V.build_invertible_net("a", 16, rng, hidden_mult=1))
    f2 = I.FunctionBlock(V.build_invertible_net("b", 16, rng, hidden_mult=1))
    perm = I.PermutationBlock(I.sample_involutive_permutation(32, rng))
    root = I.palindrome([f1, perm, f2, perm, f1])
    net = I.InvolutiveNetwork(root, ad.Parameters(root.init_params(rng, zero_last=False)))
    x = rng.standard_normal((10_000, 32))
    assert np.abs(net(net(x)) - x).max() <= 1e-9


def test_small_permutation_frequencies():
    rng = np.random.default_rng(4)
    assert I.sample_involutive_permutation(1, rng).tolist() == [0]
    swaps = sum(I.sample_involutive_permutation(2, rng).tolist() == [1, 0] for _ in range(10_000))
    assert stats.binomtest(swaps, 10_000, 0.5).pvalue > 0.01
    counts = {}
    for _ in range(100_000):
        key = tuple(I.sample_involutive_permutation(4, rng))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == I.count_involutions(4) == 10
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


def test_log_det_of_permutation_and_matrix_blocks():
    rng = np.random.default_rng(5)
    perm = I.PermutationBlock([2, 1, 0, 3])
    # dyadic point and step: every difference is exact, so the permutation's log-det is 0
    x = np.array([1.0, -2.0, 0.5, 3.0])
    f = lambda z: I.apply(perm, z[None])[0]
    assert I.log_abs_det_jacobian_numeric(f, x, h=2.0**-16) == 0.0
    x = rng.standard_normal(4)
    mb = I.MatrixBlock("m", 4)
    p = mb.init_params(rng)
    f = lambda z: mb.apply(z[None], p).value[0]
    assert abs(I.log_abs_det_jacobian_numeric(f, x)) < 1e-8
    assert np.linalg.det(mb.matrix(p)) == pytest.approx(-1.0)


def test_generator_checks_at_reduced_dim():
    rng = np.random.default_rng(6)
    gen = I.build_generator(2, 6, rng, hidden_mult=2, zero_last=False)
    x = rng.standard_normal((1000, 8))
    assert np.abs(gen(gen(x)) - x).max() <= 1e-9
    f = lambda z: gen(z[None])[0]
    assert abs(I.log_abs_det_jacobian_numeric(f, x[0], h=1e-6)) <= 1e-5


def test_zero_initialised_generator_is_exactly_involutive():
    rng = np.random.default_rng(7)
    gen = I.build_generator(2, 6, rng, hidden_mult=2, zero_last=True)
    # with zero shift-nets only permutations, swaps and reflections remain
    blocks = {type(b).__name__ for b in gen.root.leaves()}
    assert blocks <= {"FunctionBlock", "PermutationBlock", "MatrixBlock", "IdentityBlock"}
    x = rng.standard_normal((100, 8))
    assert np.abs(gen(gen(x)) - x).max() < 1e-12


# ---------------------------------------------------------------- targets


def test_mix2_worked_values():
    t = T.mix2_1d()
    assert t.log_density(np.array([[0.5]]))[0] == t.log_density(np.array([[-0.5]]))[0]
    ref = 2 * 0.5 * stats.norm.pdf(0.0, 0.5, 0.05)
    assert np.exp(t.log_density(np.zeros((1, 1))))[0] == pytest.approx(ref, rel=1e-10)
    x = t.sample(np.random.default_rng(8), 1_000_000)
    assert abs(x.mean()) < 3 * x.std() / 1e3


def test_mog6_rotation_invariance_and_peak_value():
    t = T.mog6_2d()
    rng = np.random.default_rng(9)
    x = rng.uniform(-6, 6, (200, 2))
    c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
    rot = x @ np.array([[c, -s], [s, c]]).T
    np.testing.assert_allclose(t.log_density(rot), t.log_density(x), atol=1e-9)
    peak = stats.multivariate_normal.pdf([0, 0], [0, 0], 0.25) / 6
    assert np.abs(np.exp(t.log_density(t.means)) - peak).max() <= 1e-10
    counts = np.bincount(t.mode_of(t.sample(rng, 100_000)), minlength=6)
    assert stats.chisquare(counts).pvalue > 0.01


def test_std_normal_worked_values():
    t = T.std_normal(3)
    assert t.log_density(np.zeros((1, 3)))[0] == pytest.approx(-1.5 * np.log(2 * np.pi))
    x = np.random.default_rng(10).standard_normal((5, 3))
    np.testing.assert_array_equal(t.grad_log_density(x), -x)
    s = t.sample(np.random.default_rng(11), 1_000_000)
    np.testing.assert_allclose(np.cov(s.T), np.eye(3), atol=0.01)


# ---------------------------------------------------------------- kernels


def test_gaussian_shift_ratio_is_target_ratio():
    t = T.mix2_1d()
    k = K.gaussian_shift_kernel(t, 1.0)
    phi, pi = np.array([[0.1]]), np.array([[0.35]])
    phi2, pi2 = k.propose(phi, pi)
    np.testing.assert_allclose(k.log_ratio(phi, pi, phi2, pi2),
                               t.log_density(phi + pi) - t.log_density(phi), atol=1e-12)


def test_identity_involution_always_accepts():
    k = K.InvolutiveKernel(lambda z: z, T.mix2_1d(), T.std_normal(1), "identity", "closed-form")
    run = K.run_chain(k, np.array([[0.3], [-0.2]]), 5, seed=0)
    assert run.accepted.all() and np.all(run.log_ratio == 0)


def test_single_step_and_acceptance_bookkeeping():
    k = K.gaussian_shift_kernel(T.mix2_1d(), 0.3)
    init = np.array([[0.5], [-0.5], [0.0]])
    state = K.init_state(k, init, seed=2)
    state, rec = K.step(k, state)
    run1 = K.run_chain(k, init, 1, seed=2)
    np.testing.assert_array_equal(state.phi, run1.states[0])
    run = K.run_chain(k, init, 40, seed=2)
    assert run.acceptance_rate == run.accepted.sum() / run.accepted.size


def test_hmc_energy_error_is_second_order():
    t = T.std_normal(1)
    z = np.array([[1.3, 0.7]])

    def energy_error(eps, steps):
        out = K.hmc_kernel(t, eps, steps).involution(z)
        h = lambda v: 0.5 * (v[:, 0] ** 2 + v[:, 1] ** 2)
        return abs(h(out) - h(z))[0]

    ratio = energy_error(0.2, 5) / energy_error(0.1, 10)
    assert 3.0 < ratio < 5.0


def test_hmc_moments_step_01():
    t = T.std_normal(1)
    init = 1.5 + 0.5 * np.random.default_rng(12).standard_normal((100_000, 1))
    run = K.run_chain(K.hmc_kernel(t, 0.1, 10), init, 30, seed=3)
    x = run.states[-1, :, 0]
    assert abs(x.mean()) < 3 / np.sqrt(x.size)
    assert abs(x.var() - 1) < 3 * np.sqrt(2 / x.size)


def test_nice_identity_net_never_moves_and_always_accepts():
    net, p = identity_net(2, "n")
    k = K.nice_symmetric_kernel(net, p, T.mog6_2d())
    init = T.mog6_2d().means[:3]
    run = K.run_chain(k, init, 10, seed=0)
    assert run.accepted.all()
    np.testing.assert_array_equal(run.states[-1], init)


def test_zero_initialised_generator_gives_valid_chain():
    gen = I.build_generator(1, 3, np.random.default_rng(13), hidden_mult=2)
    k = K.neural_kernel(gen, T.mix2_1d(), monitor_rate=1.0)
    run = K.run_chain(k, np.zeros((8, 1)), 50, seed=1)
    assert np.all(np.isfinite(run.log_ratio)) and run.nonfinite == 0
    assert run.max_residual <= 1e-9


# ---------------------------------------------------------------- training


def tiny_trainer(**kw):
    cfg = TR.TrainingConfig(**{**dict(aux_dim=3, hidden_mult=2, b=1, batch=8, disc_hidden=4,
                                      seed=3), **kw})
    return TR.Trainer(cfg)


def test_generator_gradient_vanishes_for_constant_critic():
    tr = tiny_trainer(b=3)
    disc = tr.disc_params.replace(**{k: np.zeros_like(v) for k, v in tr.disc_params.items()
                                     if ".W" in k})
    gen_leaves = tr.gen_params.leaves()
    _, g_loss, _ = TR.compute_losses(tr, 1, gen_leaves, disc)
    grads = ad.backward(g_loss, gen_leaves)
    assert all(np.all(g == 0) for g in grads.values())


def test_acceptance_gradient_matches_finite_differences():
    tr = tiny_trainer(target="std_normal")
    rng = np.random.default_rng(1)
    tr.gen = tr.gen.with_params(tr.gen.params.replace(
        **{k: 0.3 * rng.standard_normal(v.shape) for k, v in tr.gen.params.items() if ".m." in k}))
    name = next(k for k in tr.gen.params if ".m.W" in k)
    phi0 = np.linspace(-1.05, 0.95, 9)[:, None]

    def acc(params):
        _, a = TR.rollout_fixed_aux(tr.gen, params, tr.target, tr.aux, phi0, 1, stream(0, "a"))
        return a[0]

    leaves = tr.gen.params.leaves()
    a0 = acc(leaves).value
    j = int(np.argmax((a0 > 0.05) & (a0 < 0.95)))
    assert 0.05 < a0[j] < 0.95, "need a point off the min kink"
    grad = ad.backward(ad.sum(ad.mul(acc(leaves), ad.constant(np.eye(9)[j]))), leaves)[name]
    h = 1e-6
    idx = (0,) * tr.gen.params[name].ndim
    bump = lambda d: tr.gen.params.replace(**{name: tr.gen.params[name] + d})
    e = np.zeros_like(tr.gen.params[name])
    e[idx] = h
    fd = (float(acc(bump(e)).value[j]) - float(acc(bump(-e)).value[j])) / (2 * h)
    assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_smoke_training_has_finite_losses():
    _, rows = TR.train(TR.TrainingConfig(aux_dim=3, hidden_mult=2, batch=16, disc_hidden=8,
                                         training_steps=50, seed=1))
    assert len(rows) == 50
    assert all(np.isfinite([r["d_loss"], r["g_loss"], r["mean_acceptance"]]).all() for r in rows)
    assert all(0 <= r["mean_acceptance"] <= 1 for r in rows)


# ---------------------------------------------------------------- universality


def test_R_eps_branches():
    p = U.ConstructionParams(n=1, eps=0.1)
    phi, pi = 0.3, 0.2

    def x(q):
        return np.array([[phi, pi * p.eps, 0.0, q]])

    np.testing.assert_array_equal(U.R_eps(x(-1.0), p), np.zeros((1, 4)))
    top = U.R_eps(x(1.0), p)
    np.testing.assert_allclose(top[0, 0], 0.5 * np.tanh(pi) - phi)
    np.testing.assert_allclose(U.R_eps(x(0.0), p), 0.5 * top)
    fixed = U.ConstructionParams(n=1, eps=0.1, T=lambda f, s: f)
    np.testing.assert_array_equal(U.R_eps(x(1.0), fixed), np.zeros((1, 4)))


def test_S_branches_and_bound():
    p = U.ConstructionParams(n=2, eps=0.1)
    base = np.array([[0.7, -0.4, 0.0, 0.0, 0.0]])
    low, high = base.copy(), base.copy()
    low[0, 4], high[0, 4] = -1.0, 1.0
    np.testing.assert_array_equal(U.S_fn(low, p), np.zeros((1, 5)))
    np.testing.assert_array_equal(U.S_fn(high, p), [[0.7, -0.4, 0, 0, 0]])
    x = np.random.default_rng(14).standard_normal((10_000, 5))
    assert np.all(np.linalg.norm(U.S_fn(x, p), axis=1) <= np.linalg.norm(x, axis=1))


def test_ks_of_sample_against_itself_is_zero_and_decreases_with_eps():
    s = np.random.default_rng(15).standard_normal(1000)
    assert stats.ks_2samp(s, s).statistic == 0.0
    ks = [U.check_distributional_convergence(U.ConstructionParams(eps=e), 10_000, seed=6)
          for e in (0.5, 0.1, 0.02)]
    assert ks[0] > ks[1] > ks[2] - 0.01


# ---------------------------------------------------------------- diagnostics


def test_iid_lag_one_autocorrelation_is_small():
    x = np.random.default_rng(16).standard_normal((10_000, 1, 1))
    acf = D.autocorrelation(D.ChainArchive(x, np.ones((10_000, 1), bool)), max_lag=1)
    assert abs(acf[1]) <= 3 / np.sqrt(10_000)


def test_alternating_around_constant_has_lag_one_near_minus_one():
    x = (5.0 + np.tile([1.0, -1.0], 5000))[:, None, None]
    acf = D.autocorrelation(D.ChainArchive(x, np.ones((10_000, 1), bool)), max_lag=1)
    assert acf[1] == pytest.approx(-1.0, abs=1e-3)


def test_ar1_with_rho_09():
    rng = np.random.default_rng(17)
    n, c, rho = 50_000, 4, 0.9
    x = np.zeros((n, c))
    x[0] = rng.standard_normal(c) / np.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + rng.standard_normal(c)
    acf = D.autocorrelation(D.ChainArchive(x[..., None], np.ones((n, c), bool)), max_lag=4)
    np.testing.assert_allclose(acf, rho ** np.arange(5), atol=0.03)


def test_nll_reference_and_mode_and_tail():
    t = T.mix2_1d()
    rng = np.random.default_rng(18)
    exact = t.sample(rng, 200_000)
    a = D.ChainArchive(exact.reshape(1, -1, 1), np.ones((1, 200_000), bool))
    _, nll, ref = D.expected_nll(a, t, t.sample(rng, 200_000))
    assert abs(nll[0] - ref) < 0.02
    at_mode = D.ChainArchive(np.full((1, 10, 1), 0.5), np.ones((1, 10), bool))
    assert D.expected_nll(at_mode, t)[1][0] < ref
    run = K.run_chain(K.gaussian_shift_kernel(t, 0.1), np.full((200, 1), 3.0), 60, seed=4)
    curve = D.expected_nll(D.ChainArchive.from_run(run), t)[1]
    assert curve[::10][0] > curve[::10][-1]
    assert np.all(np.diff(curve[:30:5]) < 0)


def test_tv_self_consistency_and_point_mass():
    t = T.mix2_1d()
    exact = t.sample(np.random.default_rng(19), 1_000_000)
    assert D.tv_distance_histogram(exact, t, bins=200) <= 0.01
    lo, hi = t.marginal_range(0)
    edges = np.linspace(lo, hi, 201)
    k = np.searchsorted(edges, 0.5) - 1
    mass = t.marginal_cdf(0, edges[k + 1]) - t.marginal_cdf(0, edges[k])
    tv = D.tv_distance_histogram(np.full((100, 1), 0.5), t, bins=200)
    assert tv == pytest.approx(1 - mass, abs=1e-6)
    with pytest.raises(ValueError):
        D.tv_distance_histogram(np.zeros((0, 1)), t)
