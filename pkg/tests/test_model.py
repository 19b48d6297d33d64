import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpsv.model import (CoefficientVector, EvaluationError, ValidationError, VolSpec,
                        check_correlation_condition, correlation_bound, effective_rho,
                        make_volspec, ou_spec, validate_assumption1)


def test_standard_rho_default():
    c = CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05, rho1=0.3, rho2=0.2, rho3=0.5)
    assert c.rho == pytest.approx(0.4 * 0.5 * 0.3 * 0.2)
    assert check_correlation_condition(c)


def test_replace_keeps_rho_tied_unless_overridden():
    c = CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05, rho1=0.3, rho2=0.2, rho3=0.5)
    d = c.replace(xi=0.8)
    assert d.rho == pytest.approx(d.standard_rho)
    e = c.replace(rho=0.1).replace(xi=0.8)
    assert e.rho == 0.1


@pytest.mark.parametrize("field,value", [
    ("rho1", 1.0), ("rho1", -1.0), ("rho2", 1.5), ("rho3", 1.01), ("k", -0.1),
    ("xi", -0.4), ("theta", float("nan")), ("r", float("inf")),
])
def test_invalid_coefficients(field, value):
    kw = dict(k=1, theta=0.2, xi=0.4, r=0.05)
    kw[field] = value
    with pytest.raises(ValidationError):
        CoefficientVector(**kw)


def test_rho3_endpoints_allowed():
    CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05, rho3=1.0)
    CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05, rho3=-1.0)


def test_presets_pass_their_own_bounds():
    grid = np.linspace(-50, 50, 20001)
    for q in ("constant", "rational"):
        spec = make_volspec(q, "clamped_abs", h_params={"h_min": 0.1, "h_max": 0.6})
        report = validate_assumption1(spec, grid)
        assert report.passed, report.violations[:3]


def test_rational_preset_extrema():
    spec = make_volspec("rational", "constant", h_params={"value": 0.3})
    z = np.linspace(-100, 100, 200001)
    assert spec.q(z).min() >= 2.0
    assert spec.q(z).max() == pytest.approx(3.0)
    assert spec.q(0.0) == pytest.approx(3.0)


def test_rational_derivatives_against_finite_differences():
    spec = make_volspec("rational", "constant", h_params={"value": 0.3})
    z = np.linspace(-3, 3, 61)
    step = 1e-6
    for f, df in ((spec.q, spec.dq), (spec.dq, spec.d2q), (spec.d2q, spec.d3q)):
        fd = (f(z + step) - f(z - step)) / (2 * step)
        np.testing.assert_allclose(df(z), fd, rtol=1e-5, atol=1e-7)


def test_assumption_report_lists_every_violation():
    base = ou_spec()
    bad = VolSpec(q=lambda z: 1.0 + 0.0 * np.asarray(z), dq=lambda z: np.asarray(z) * 0 + 1.0,
                  d2q=base.d2q, d3q=base.d3q, h=base.h, q_min=1.0, q_max=1.0, h_min=0.3,
                  h_max=0.3, decay_constant=0.5)
    report = validate_assumption1(bad, [0.0, 1.0, 2.0])
    assert not report.passed
    assert len(report.violations) == 3
    assert {v.point for v in report.violations} == {0.0, 1.0, 2.0}


def test_non_finite_q_raises():
    base = ou_spec()
    bad = VolSpec(q=lambda z: 1.0 / np.asarray(z), dq=base.dq, d2q=base.d2q, d3q=base.d3q,
                  h=base.h, q_min=1.0, q_max=1.0, h_min=0.3, h_max=0.3, decay_constant=0.0)
    with pytest.raises(EvaluationError), np.errstate(divide="ignore"):
        validate_assumption1(bad, [0.0])


def test_volspec_rejects_degenerate_bounds():
    base = ou_spec()
    with pytest.raises(ValidationError):
        VolSpec(q=base.q, dq=base.dq, d2q=base.d2q, d3q=base.d3q, h=base.h, q_min=0.0,
                q_max=1.0, h_min=0.3, h_max=0.3, decay_constant=0.0)


def test_unknown_preset():
    with pytest.raises(ValidationError):
        make_volspec("cubic")


def test_correlation_condition_boundary_is_inclusive():
    c = CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05, rho=0.4)
    assert correlation_bound(c) == pytest.approx(0.4)
    assert check_correlation_condition(c)
    assert not check_correlation_condition(c.replace(rho=0.41))


@settings(max_examples=200, deadline=None)
@given(xi=st.floats(0.0, 3.0), rho1=st.floats(-0.99, 0.99), rho2=st.floats(-0.99, 0.99),
       rho3=st.floats(-1.0, 1.0), w1=st.floats(-1.0, 1.0).filter(lambda v: v != 0.0),
       b1=st.floats(-1.0, 1.0).filter(lambda v: v != 0.0))
def test_portfolio_derived_rho_always_admissible(xi, rho1, rho2, rho3, w1, b1):
    c = CoefficientVector(k=1, theta=0.2, xi=xi, r=0.05, rho1=rho1, rho2=rho2, rho3=rho3)
    rho = effective_rho(c, w1, b1)
    assert check_correlation_condition(c.replace(rho=rho))


def test_effective_rho_domain():
    c = CoefficientVector(k=1, theta=0.2, xi=0.4, r=0.05)
    with pytest.raises(ValueError):
        effective_rho(c, 0.0, 0.5)
    with pytest.raises(ValueError):
        effective_rho(c, 1.5, 0.5)
    assert effective_rho(c, 1.0, 1.0) == pytest.approx(c.standard_rho)


def test_as_dict_round_trip():
    c = CoefficientVector(k=2, theta=0.3, xi=0.3, r=0.03, rho1=0.2, rho2=0.1, rho3=0.5)
    assert CoefficientVector(**c.as_dict()) == c
    assert math.isclose(c.as_dict()["rho"], c.standard_rho)
