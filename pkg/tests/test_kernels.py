import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from involutive_mcmc import autodiff as ad
from involutive_mcmc import diagnostics as D
from involutive_mcmc import involutive as I
from involutive_mcmc import invertible as V
from involutive_mcmc import kernels as K
from involutive_mcmc import targets as T
from involutive_mcmc.errors import NotVolumePreserving, ShapeError


def closed_form_kernels():
    return [K.gaussian_shift_kernel(T.mix2_1d(), 0.3),
            K.hmc_kernel(T.mog6_2d(), 0.1, 7),
            K.hmc_kernel(T.std_normal(3), 0.25, 5)]


@pytest.mark.parametrize("kernel", closed_form_kernels(), ids=lambda k: k.name)
def test_closed_form_proposals_are_involutions(kernel):
    d = kernel.state_dim + kernel.aux_dim
    z = np.random.default_rng(0).standard_normal((500, d))
    assert K.involution_residual(kernel, z) < 1e-10


@pytest.mark.parametrize("kernel", closed_form_kernels(), ids=lambda k: k.name)
def test_closed_form_proposals_preserve_volume(kernel):
    d = kernel.state_dim + kernel.aux_dim
    x = np.random.default_rng(1).standard_normal(d)
    f = lambda z: kernel.involution(z[None])[0]
    assert abs(I.log_abs_det_jacobian_numeric(f, x, h=1e-6)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3))
def test_property_log_ratio_antisymmetric(phi, pi):
    # the reverse move of an involutive proposal has the negated log ratio
    k = K.gaussian_shift_kernel(T.mix2_1d(), 0.3)
    a, b = np.array([[phi]]), np.array([[pi]])
    a2, b2 = k.propose(a, b)
    np.testing.assert_allclose(k.log_ratio(a, b, a2, b2), -k.log_ratio(a2, b2, a, b),
                               atol=1e-9)


def test_random_walk_acceptance_matches_closed_form():
    # stationary acceptance of random-walk Metropolis on N(0,1) with N(0, s^2)
    # increments is (2/pi) arctan(2/s)
    s = 1.0
    target = T.std_normal(1)
    init = target.sample(np.random.default_rng(2), 20_000)
    run = K.run_chain(K.gaussian_shift_kernel(target, s), init, 5, seed=3)
    expected = 2 / np.pi * np.arctan(2 / s)
    se = np.sqrt(expected * (1 - expected) / run.accepted.size)
    assert abs(run.acceptance_rate - expected) < 4 * se


def test_one_step_from_stationarity_stays_stationary():
    target = T.std_normal(1)
    init = target.sample(np.random.default_rng(4), 50_000)
    run = K.run_chain(K.hmc_kernel(target, 0.9, 3), init, 1, seed=5)
    assert stats.kstest(run.states[0, :, 0], "norm").pvalue > 1e-3


def test_run_chain_records_are_consistent():
    k = K.gaussian_shift_kernel(T.mix2_1d(), 0.3)
    init = np.zeros((4, 1))
    run = K.run_chain(k, init, 20, seed=1)
    assert run.states.shape == (20, 4, 1) and run.accepted.shape == (20, 4)
    prev = run.previous_states
    np.testing.assert_array_equal(prev[0], init)
    acc = run.accepted.astype(bool)
    np.testing.assert_array_equal(run.states[acc], run.proposals[acc])
    np.testing.assert_array_equal(run.states[~acc], prev[~acc])


def test_chains_are_independent_of_batch_composition():
    k = K.gaussian_shift_kernel(T.mix2_1d(), 0.3)
    init = np.linspace(-0.5, 0.5, 6)[:, None]
    full = K.run_chain(k, init, 30, seed=9)
    part = K.run_chain(k, init[3:], 30, seed=9, start_chain=3)
    np.testing.assert_array_equal(full.states[:, 3:], part.states)
    again = K.run_chain(k, init, 30, seed=9)
    np.testing.assert_array_equal(full.states, again.states)


def test_nonfinite_proposals_are_rejected_and_counted(caplog):
    class Cliff(T.StandardNormal):
        def log_unnormalized(self, x):
            out = super().log_unnormalized(x)
            return np.where(x[..., 0] > 0.5, np.nan, out)

    k = K.gaussian_shift_kernel(Cliff(1), 1.0)
    with caplog.at_level(logging.WARNING):
        run = K.run_chain(k, np.zeros((50, 1)), 10, seed=0)
    assert run.nonfinite > 0
    assert np.all(run.states[..., 0] <= 0.5)
    assert "non-finite" in caplog.text


def test_neural_kernel_checks_dimensions_and_volume():
    rng = np.random.default_rng(0)
    gen = I.build_generator(1, 3, rng, hidden_mult=2)
    k = K.neural_kernel(gen, T.mix2_1d())
    assert k.aux_dim == 3
    with pytest.raises(ShapeError):
        K.neural_kernel(gen, T.mix2_1d(), aux=T.std_normal(2))
    with pytest.raises(TypeError):
        K.neural_kernel(gen.root, T.mix2_1d())


def test_nice_symmetric_kernel_is_involution():
    rng = np.random.default_rng(3)
    net = V.build_invertible_net("f", 2, rng, hidden_mult=2)
    p = ad.Parameters(net.init_params(rng, zero_last=False))
    k = K.nice_symmetric_kernel(net, p, T.mog6_2d())
    z = rng.standard_normal((300, 3))
    assert K.involution_residual(k, z) < 1e-12
    with pytest.raises(ShapeError):
        K.nice_symmetric_kernel(net, p, T.mix2_1d())


def test_nice_symmetric_kernel_rejects_non_volume_preserving():
    class Fake:
        volume_preserving = False
        dim = 1

    with pytest.raises(NotVolumePreserving):
        K.nice_symmetric_kernel(Fake(), None, T.mix2_1d())


def test_records_csv_roundtrip(tmp_path):
    k = K.gaussian_shift_kernel(T.mog6_2d(), 0.5)
    run = K.run_chain(k, np.zeros((3, 2)), 7, seed=2, start_chain=5)
    path = tmp_path / "records.csv"
    K.write_records_csv(path, run)
    archive = D.read_records_csv(path)
    np.testing.assert_array_equal(archive.states, run.states)
    np.testing.assert_array_equal(archive.accepted, run.accepted)
