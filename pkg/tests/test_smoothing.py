import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsv.initial import ProductInitial
from lpsv.lamperti import LampertiMap
from lpsv.model import CoefficientVector, make_volspec, ou_spec
from lpsv.particles import CommonNoisePath
from lpsv.smoothing import (TERM_NAMES, ResolutionError, TransformedKernel, convergence_study,
                            default_weight, energy_identity, energy_identity_residual, limit_J,
                            l2_distance, preset_profiles, smooth)
from lpsv.spde import DensityGrid, SolverConfig, cfl_dt, solve

C = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05)
RATIONAL = make_volspec("rational", "clamped_abs", h_params={"h_min": 0.1, "h_max": 0.6})
Z = np.linspace(-6, 6, 2401)


@pytest.fixture(scope="module")
def rmap():
    return LampertiMap(RATIONAL, C)


@pytest.fixture(scope="module")
def omap():
    return LampertiMap(ou_spec(), C)


def test_kernel_mass_is_one(rmap):
    k = TransformedKernel(0.05, rmap)
    y = np.linspace(float(rmap.Q(-4)), float(rmap.Q(4)), 41)
    np.testing.assert_allclose(k.mass(y, np.linspace(-12, 12, 12001)), 1.0, atol=1e-8)


def test_kernel_rejects_bad_epsilon(rmap):
    with pytest.raises(ValueError):
        TransformedKernel(0.0, rmap)


def test_resolution_check(rmap):
    with pytest.raises(ResolutionError):
        TransformedKernel(1e-4, rmap).check_resolution(np.linspace(-1, 1, 11))
    TransformedKernel(0.2, rmap).check_resolution(np.linspace(-1, 1, 101))


def test_smooth_is_gaussian_convolution_at_unit_q(omap):
    s = 0.5
    u = np.exp(-0.5 * (Z / s) ** 2) / math.sqrt(2 * math.pi * s * s)
    y = np.linspace(-3, 3, 121)
    for eps in (0.2, 0.05):
        f = smooth(u, None, TransformedKernel(eps, omap), y, z_grid=Z)
        ref = np.exp(-0.5 * y ** 2 / (s * s + eps)) / math.sqrt(2 * math.pi * (s * s + eps))
        np.testing.assert_allclose(f.values, ref, atol=1e-10)
        dref = -y / (s * s + eps) * ref
        np.testing.assert_allclose(f.d1, dref, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_smooth_is_linear_in_u_and_g(a, b):
    m = LampertiMap(RATIONAL, C)
    k = TransformedKernel(0.1, m)
    y = np.linspace(-1, 1, 21)
    u1, _ = preset_profiles(Z)["gaussian"]
    u2, _ = preset_profiles(Z)["mixture"]
    lhs = smooth(a * u1 + b * u2, None, k, y, z_grid=Z).values
    rhs = a * smooth(u1, None, k, y, z_grid=Z).values + b * smooth(u2, None, k, y, z_grid=Z).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    g1, g2 = (lambda z: np.cos(z)), (lambda z: z * z)
    lhs = smooth(u1, lambda z: a * g1(z) + b * g2(z), k, y, z_grid=Z).values
    rhs = a * smooth(u1, g1, k, y, z_grid=Z).values + b * smooth(u1, g2, k, y, z_grid=Z).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_smooth_accepts_lambda_rows(rmap):
    k = TransformedKernel(0.1, rmap)
    u, _ = preset_profiles(Z)["gaussian"]
    y = np.linspace(-1, 1, 11)
    batch = smooth(np.vstack([u, 2 * u]), None, k, y, z_grid=Z)
    assert batch.values.shape == (2, 11)
    np.testing.assert_allclose(batch.values[1], 2 * batch.values[0])
    with pytest.raises(ValueError):
        smooth(u[:-1], None, k, y, z_grid=Z)


def test_limit_identity_and_scaling():
    m1 = LampertiMap(ou_spec(), C)
    y = np.linspace(-2, 2, 41)
    u = np.exp(-Z ** 2)
    np.testing.assert_allclose(limit_J(u, m1, y, z_grid=Z).values, np.exp(-y ** 2), atol=5e-5)
    m2 = LampertiMap(ou_spec(q_value=2.0), C)
    np.testing.assert_allclose(limit_J(u, m2, y, z_grid=Z).values, 2 * np.exp(-(2 * y) ** 2),
                               atol=1e-4)


def test_limit_rational_by_composition(rmap):
    y = np.linspace(-2, 2, 41)
    u = np.exp(-Z ** 2)
    z = rmap.inverse_Q(y)
    ref = RATIONAL.q(z) * np.exp(-z ** 2)
    np.testing.assert_allclose(limit_J(u, rmap, y, z_grid=Z).values, ref, atol=5e-5)


@pytest.mark.parametrize("qname", ["constant", "rational"])
def test_convergence_is_monotone_for_presets(qname):
    m = LampertiMap(make_volspec(qname, "constant", h_params={"value": 0.3}), C)
    y = np.linspace(float(m.Q(-6)), float(m.Q(6)), 401)
    for name, (u, du) in preset_profiles(Z).items():
        rows = convergence_study(u, m, [0.2, 0.1, 0.05, 0.025], z_grid=Z, y_grid=y, du=du)
        d = [r.distance for r in rows]
        d1 = [r.d1_distance for r in rows]
        assert all(a > b for a, b in zip(d, d[1:])), (name, d)
        assert all(a > b for a, b in zip(d1, d1[1:])), (name, d1)


def test_convergence_rate_is_order_epsilon_at_unit_q(omap):
    u, _ = preset_profiles(Z)["gaussian"]
    y = np.linspace(-6, 6, 801)
    rows = convergence_study(u, omap, [0.02, 0.01, 0.005], z_grid=Z, y_grid=y)
    ratios = [a.distance / b.distance for a, b in zip(rows, rows[1:])]
    assert all(1.8 < r < 2.2 for r in ratios)


def test_convergence_of_zero_profile(rmap):
    y = np.linspace(-2, 2, 41)
    rows = convergence_study(np.zeros_like(Z), rmap, [0.2, 0.1], z_grid=Z, y_grid=y)
    assert all(r.distance == 0.0 for r in rows)
    with pytest.raises(ValueError):
        convergence_study(np.zeros_like(Z), rmap, [0.1, 0.2], z_grid=Z, y_grid=y)


def test_l2_distance():
    y = np.linspace(0, 1, 101)
    assert l2_distance(np.ones(101), np.zeros(101), y) == pytest.approx(1.0)


def test_default_weight():
    w = default_weight()
    x = np.array([0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(w.w2(x), [0.0, 0.5, 1.0, 1.0])
    np.testing.assert_allclose(w.dw2(x), [1.0, 1.0, 0.0, 0.0])


# -- energy identity ------------------------------------------------------------

def _energy_run(dx, T=0.1, u0=None, c=C, spec=RATIONAL):
    base = SolverConfig(dx=dx, dy=2 * dx, dt=1.0, X_max=3.0, y_min=-2.0, y_max=2.4)
    cfg = replace(base, dt=cfl_dt(base, c, spec, T))
    n = round(T / cfg.dt)
    u0 = ProductInitial("rayleigh", x_scale=0.7, y_mean=0.2, y_sd=0.3) if u0 is None else u0
    res = solve(cfg, c, spec, u0, CommonNoisePath.zero(cfg.dt, n), record_every=max(1, n // 50))
    return cfg, res


def test_energy_terms_finite_and_named(rmap):
    _, res = _energy_run(0.05)
    ident = energy_identity(res, C, RATIONAL, TransformedKernel(0.2, rmap), res.snapshots[0])
    assert set(ident.terms) == set(TERM_NAMES)
    assert ident.finite
    assert ident.terms["cross"] == 0.0
    assert ident.residual < 0.1


def test_energy_of_zero_solution(rmap):
    cfg, _ = _energy_run(0.05)
    zero = DensityGrid(cfg.x_nodes, cfg.y_nodes, np.zeros((cfg.x_nodes.size, cfg.y_nodes.size)),
                       0.0)
    res = solve(cfg, C, RATIONAL, zero, CommonNoisePath.zero(cfg.dt, 10), record_every=2)
    ident = energy_identity(res, C, RATIONAL, TransformedKernel(0.2, rmap), zero)
    assert all(v == 0.0 for v in ident.terms.values())
    assert ident.residual == 0.0


def test_energy_needs_increments(rmap):
    _, res = _energy_run(0.05)
    res.increments_W0 = None
    with pytest.raises(ValueError):
        energy_identity_residual(res, C, RATIONAL, TransformedKernel(0.2, rmap),
                                 res.snapshots[0])


def test_energy_cross_term_follows_rho(rmap):
    c = C.replace(rho1=0.3, rho2=0.2, rho3=0.5)
    c2 = c.replace(rho=c.standard_rho + 0.05)
    _, res = _energy_run(0.05, c=c2)
    ident = energy_identity(res, c2, RATIONAL, TransformedKernel(0.2, rmap), res.snapshots[0])
    assert ident.terms["cross"] != 0.0
