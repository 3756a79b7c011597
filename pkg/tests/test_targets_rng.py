import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from involutive_mcmc import autodiff as ad
from involutive_mcmc import targets as T
from involutive_mcmc.errors import ConfigError
from involutive_mcmc.rng import chain_streams, purpose_code, stream


def test_mix2_density_matches_scipy():
    t = T.mix2_1d()
    x = np.linspace(-1, 1, 41)[:, None]
    ref = np.log(0.5 * stats.norm.pdf(x[:, 0], -0.5, 0.05) + 0.5 * stats.norm.pdf(x[:, 0], 0.5, 0.05))
    np.testing.assert_allclose(t.log_density(x), ref, rtol=1e-12)


def test_mog6_density_matches_scipy():
    t = T.mog6_2d()
    ang = np.arange(6) * np.pi / 3
    means = 5 * np.stack([np.cos(ang), np.sin(ang)], 1)
    np.testing.assert_allclose(t.means, means, atol=1e-12)
    x = np.random.default_rng(0).uniform(-6, 6, (50, 2))
    ref = np.log(np.mean([stats.multivariate_normal.pdf(x, m, 0.25) for m in means], axis=0))
    np.testing.assert_allclose(t.log_density(x), ref, rtol=1e-10)


def test_std_normal_density():
    t = T.std_normal(3)
    x = np.random.default_rng(1).standard_normal((10, 3))
    np.testing.assert_allclose(t.log_density(x), stats.norm.logpdf(x).sum(1), rtol=1e-13)


@pytest.mark.parametrize("name", ["mix2", "mog6", "std_normal"])
def test_gradient_matches_finite_differences(name):
    t = T.get_target(name)
    x = t.sample(np.random.default_rng(2), 5) + 0.01
    h = 1e-6
    num = np.stack([(t.log_density(x + h * e) - t.log_density(x - h * e)) / (2 * h)
                    for e in np.eye(t.dim)], axis=-1)
    np.testing.assert_allclose(t.grad_log_density(x), num, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("name", ["mix2", "mog6", "std_normal"])
def test_node_density_agrees_with_array_density(name):
    t = T.get_target(name)
    x = t.sample(np.random.default_rng(3), 7)
    np.testing.assert_allclose(t.log_density_node(ad.constant(x)).value, t.log_density(x),
                               rtol=1e-12)


def test_sampler_moments():
    rng = np.random.default_rng(4)
    x = T.mix2_1d().sample(rng, 100_000)[:, 0]
    # mean 0, variance 0.5^2 + 0.05^2
    assert abs(x.mean()) < 3 * np.sqrt(0.2525 / 1e5)
    assert x.var() == pytest.approx(0.2525, rel=0.02)
    y = T.mog6_2d().sample(rng, 60_000)
    occ = np.bincount(T.mog6_2d().mode_of(y), minlength=6) / 60_000
    np.testing.assert_allclose(occ, 1 / 6, atol=0.01)


def test_marginal_cdf_matches_scipy():
    t = T.mix2_1d()
    s = np.linspace(-1, 1, 9)
    ref = 0.5 * stats.norm.cdf(s, -0.5, 0.05) + 0.5 * stats.norm.cdf(s, 0.5, 0.05)
    np.testing.assert_allclose(t.marginal_cdf(0, s), ref, atol=1e-14)


def test_mode_assignment():
    t = T.mix2_1d()
    assert t.mode_of(np.array([[-0.9], [-0.01], [0.01], [3.0]])).tolist() == [0, 0, 1, 1]
    m = T.mog6_2d()
    assert m.mode_of(m.means + 0.1).tolist() == list(range(6))


def test_unknown_target_is_a_config_error():
    with pytest.raises(ConfigError):
        T.get_target("banana")
    with pytest.raises(ValueError):
        T.mix2_1d(sd=0.0)


# ---------------------------------------------------------------- rng


def test_streams_are_reproducible_and_distinct():
    a = stream(7, "x", 3).standard_normal(5)
    np.testing.assert_array_equal(a, stream(7, "x", 3).standard_normal(5))
    assert not np.array_equal(a, stream(7, "x", 4).standard_normal(5))
    assert not np.array_equal(a, stream(7, "y", 3).standard_normal(5))
    assert not np.array_equal(a, stream(8, "x", 3).standard_normal(5))
    assert purpose_code("x") == purpose_code("x") != purpose_code("y")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 50), st.integers(1, 10))
def test_property_chain_streams_depend_only_on_chain_id(seed, start, n):
    full = [g.random() for g in chain_streams(seed, "aux", start + n)]
    part = [g.random() for g in chain_streams(seed, "aux", n, start=start)]
    assert full[start:] == part
