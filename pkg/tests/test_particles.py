import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsv.initial import ProductInitial
from lpsv.model import CoefficientVector, make_volspec, ou_spec
from lpsv.particles import (BLOCK_SIZE, CommonNoisePath, NumericDivergenceError,
                            conditional_vol_density, empirical_snapshot, gaussian_kde,
                            generate_common_noise, iter_portfolio, loss_process,
                            silverman_bandwidth, simulate_portfolio, simulate_volatility)
from lpsv.verification import first_passage_oracle

C = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05, rho1=0.3, rho2=0.2, rho3=0.5)
SPEC = make_volspec("constant", "clamped_abs", h_params={"h_min": 0.1, "h_max": 0.6})


def test_noise_is_reproducible_and_read_only():
    a = generate_common_noise(1e-3, 100, 0.5, seed=3)
    b = generate_common_noise(1e-3, 100, 0.5, seed=3)
    np.testing.assert_array_equal(a.increments_W0, b.increments_W0)
    np.testing.assert_array_equal(a.increments_B0, b.increments_B0)
    with pytest.raises(ValueError):
        a.increments_W0[0] = 1.0
    assert a.horizon == pytest.approx(0.1)
    assert a.times.size == 101


def test_noise_correlation_and_scale():
    n = generate_common_noise(1e-3, 200000, 0.5, seed=1)
    w, b = n.increments_W0, n.increments_B0
    assert np.corrcoef(w, b)[0, 1] == pytest.approx(0.5, abs=0.01)
    assert w.var() == pytest.approx(1e-3, rel=0.02)
    assert b.var() == pytest.approx(1e-3, rel=0.02)


@pytest.mark.parametrize("rho3", [1.0, -1.0])
def test_noise_fully_correlated(rho3):
    n = generate_common_noise(1e-2, 50, rho3, seed=2)
    np.testing.assert_array_equal(n.increments_B0, rho3 * n.increments_W0)


def test_coarsen_sums_increments():
    n = generate_common_noise(1e-3, 12, 0.0, seed=0)
    c = n.coarsen(4)
    assert c.dt == pytest.approx(4e-3)
    np.testing.assert_allclose(c.increments_W0, n.increments_W0.reshape(3, 4).sum(axis=1))
    with pytest.raises(ValueError):
        n.coarsen(5)
    assert n.coarsen(1) is n


def test_zero_noise():
    z = CommonNoisePath.zero(0.01, 10)
    assert z.n_steps == 10
    assert not z.increments_W0.any()


def test_same_seed_same_path():
    x = np.full(100, 0.5)
    s = np.full(100, 0.2)
    noise = generate_common_noise(1e-2, 50, C.rho3, seed=4)
    a = simulate_portfolio(C, SPEC, (x, s), noise, seed=9)
    b = simulate_portfolio(C, SPEC, (x, s), noise, seed=9)
    np.testing.assert_array_equal(a.loss, b.loss)
    np.testing.assert_array_equal(a.states[-1].X, b.states[-1].X)
    c = simulate_portfolio(C, SPEC, (x, s), noise, seed=10)
    assert not np.array_equal(a.states[-1].X, c.states[-1].X)


def test_blocks_do_not_depend_on_portfolio_size():
    # particle i draws from its block's stream, so the first block is unchanged by adding more
    noise = generate_common_noise(1e-2, 20, C.rho3, seed=4)
    n_small, n_big = BLOCK_SIZE, BLOCK_SIZE + 500
    small = simulate_portfolio(C, SPEC, (np.full(n_small, 0.5), np.full(n_small, 0.2)), noise, 1)
    big = simulate_portfolio(C, SPEC, (np.full(n_big, 0.5), np.full(n_big, 0.2)), noise, 1)
    np.testing.assert_array_equal(small.states[-1].X, big.states[-1].X[:n_small])


def test_absorption_is_permanent():
    noise = generate_common_noise(1e-2, 100, C.rho3, seed=4)
    x = np.random.default_rng(0).uniform(0.0, 0.3, 2000)
    prev_alive = None
    for state in iter_portfolio(C, SPEC, (x, np.full(2000, 0.2)), noise, seed=3):
        assert np.all(state.X[~state.alive] == 0.0)
        assert np.all(state.X[state.alive] > 0.0)
        if prev_alive is not None:
            assert not np.any(state.alive & ~prev_alive)
        prev_alive = state.alive.copy()
    died = ~state.alive
    assert np.all(np.isfinite(state.default_time[died]))
    assert np.all(np.isinf(state.default_time[~died]))


def test_loss_is_monotone_and_bounded():
    noise = generate_common_noise(1e-2, 100, C.rho3, seed=5)
    path = simulate_portfolio(C, SPEC, (np.full(3000, 0.3), np.full(3000, 0.2)), noise, 2,
                              record_every=10)
    loss = path.loss
    assert loss[0] == 0.0
    assert np.all(np.diff(loss) >= 0)
    assert 0.0 <= loss[-1] <= 1.0
    np.testing.assert_allclose(loss_process(path.states), loss[::10])


def test_zero_start_is_defaulted():
    noise = CommonNoisePath.zero(0.01, 3)
    path = simulate_portfolio(C, SPEC, (np.array([0.0, 1.0]), np.array([0.2, 0.2])), noise, 0)
    assert path.loss[0] == 0.5


def test_negative_start_rejected():
    noise = CommonNoisePath.zero(0.01, 3)
    with pytest.raises(ValueError):
        simulate_portfolio(C, SPEC, (np.array([-0.1]), np.array([0.2])), noise, 0)


def test_zero_idiosyncratic_is_deterministic_skeleton():
    c = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05)
    noise = CommonNoisePath.zero(0.01, 100)
    path = simulate_portfolio(c, ou_spec(0.3), (np.full(10, 1.0), np.full(10, 0.5)), noise, 0,
                              zero_idiosyncratic=True)
    x_end = 1.0 + (0.05 - 0.045) * 1.0
    s_end = 0.2 + 0.3 * (1 - 0.01) ** 100
    np.testing.assert_allclose(path.states[-1].X, x_end, rtol=1e-12)
    np.testing.assert_allclose(path.states[-1].sigma, s_end, rtol=1e-12)


def test_divergence_is_reported():
    c = CoefficientVector(k=1e308, theta=1e308, xi=0.0, r=0.05)
    noise = CommonNoisePath.zero(1.0, 3)
    with pytest.raises(NumericDivergenceError), np.errstate(all="ignore"):
        simulate_portfolio(c, ou_spec(), (np.full(3, 1.0), np.full(3, -1e308)), noise, 0)


def test_mixture_parameters_per_particle():
    c2 = C.replace(r=0.5)
    noise = generate_common_noise(1e-2, 10, C.rho3, seed=0)
    path = simulate_portfolio([C, c2], ou_spec(), (np.full(2, 5.0), np.full(2, 0.2)), noise, 0,
                              zero_idiosyncratic=True)
    x = path.states[-1].X
    assert x[1] - x[0] == pytest.approx(0.45 * 0.1)
    with pytest.raises(ValueError):
        simulate_portfolio([C, C, C], ou_spec(), (np.full(2, 5.0), np.full(2, 0.2)), noise, 0)


def test_snapshot_accounts_for_every_particle():
    noise = generate_common_noise(1e-2, 50, C.rho3, seed=5)
    path = simulate_portfolio(C, SPEC, (np.full(1000, 0.3), np.full(1000, 0.2)), noise, 2)
    snap = empirical_snapshot(path.states[-1], np.linspace(0, 1, 5), np.linspace(0, 0.3, 4))
    assert snap.loss + snap.counts.sum() / snap.n == pytest.approx(1.0, abs=1e-15)


def test_first_passage_against_constant_coefficient_particles():
    c = CoefficientVector(k=0.0, theta=0.3, xi=0.0, r=0.05)
    noise = CommonNoisePath.zero(1e-3, 1000)
    n = 40000
    path = simulate_portfolio(c, ou_spec(0.3), (np.full(n, 0.5), np.full(n, 0.3)), noise, 1,
                              bridge=True)
    ref = first_passage_oracle(0.5, 0.05 - 0.045, 0.3, 1.0)
    se = math.sqrt(ref * (1 - ref) / n)
    assert abs(path.loss[-1] - ref) < 4 * se + 1e-3


# -- volatility --------------------------------------------------------------

def test_volatility_record_and_sup_agree():
    paths = simulate_volatility(C, ou_spec(), 0.2, 50, seed=1, dt=1e-2, n_steps=40)
    final, sup = simulate_volatility(C, ou_spec(), 0.2, 50, seed=1, dt=1e-2, n_steps=40,
                                     record=False)
    np.testing.assert_array_equal(paths[:, -1], final)
    np.testing.assert_array_equal(np.abs(paths).max(axis=1), sup)


def test_volatility_needs_grid():
    with pytest.raises(ValueError):
        simulate_volatility(C, ou_spec(), 0.2, 5, seed=1)


def test_unconditional_ou_moments():
    c = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05)
    final, _ = simulate_volatility(c, ou_spec(), 0.5, 40000, seed=3, dt=1e-2, n_steps=100,
                                   record=False)
    mean = 0.2 + 0.3 * math.exp(-1)
    var = 0.16 * (1 - math.exp(-2)) / 2
    assert final.mean() == pytest.approx(mean, abs=4 * math.sqrt(var / 40000))
    assert final.var() == pytest.approx(var, rel=0.03)


def test_kde_mass_and_errors():
    noise = generate_common_noise(1e-2, 100, 0.0, seed=3)
    d = conditional_vol_density(C, ou_spec(), 0.2, noise, 1.0, 5000, seed=1)
    assert d.mass == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        conditional_vol_density(C, ou_spec(), 0.2, noise, 1.0, 5000, bandwidth=0.0)
    with pytest.raises(ValueError):
        conditional_vol_density(C, ou_spec(), 0.2, noise, 1.0, 999)
    with pytest.raises(ValueError):
        conditional_vol_density(C, ou_spec(), 0.2, noise, 1.005, 5000)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=60, unique=True),
       st.floats(0.05, 1.0))
def test_gaussian_kde_integrates_to_one(samples, bw):
    s = np.array(samples)
    grid = np.linspace(s.min() - 10 * bw, s.max() + 10 * bw, 4000)
    assert np.trapezoid(gaussian_kde(s, bw, grid), grid) == pytest.approx(1.0, abs=1e-6)


def test_silverman_positive():
    assert silverman_bandwidth(np.random.default_rng(0).normal(size=1000)) > 0


# -- initial presets -----------------------------------------------------------

def test_initial_presets():
    init = ProductInitial("rayleigh", x_scale=0.7, y_mean=0.2, y_sd=0.1)
    x = np.linspace(0, 10, 20001)
    assert np.trapezoid(init.x_density(x), x) == pytest.approx(1.0, abs=1e-6)
    xs, ys = init.sample(100000, np.random.default_rng(0))
    assert xs.mean() == pytest.approx(0.7 * math.sqrt(math.pi / 2), rel=0.01)
    assert ys.std() == pytest.approx(0.1, rel=0.02)
    point = ProductInitial("point", x0=0.5, y_mean=0.3, y_sd=0.0)
    xs, ys = point.sample(3, np.random.default_rng(0))
    assert np.all(xs == 0.5) and np.all(ys == 0.3)
    with pytest.raises(ValueError):
        point.density(xs, ys)
    with pytest.raises(ValueError):
        ProductInitial("uniform")
