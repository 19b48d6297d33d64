"""Analytic oracles and cross-checks between the particle system, the SPDE solver
and the volatility analytics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .model import CoefficientVector, VolSpec
from .particles import (CommonNoisePath, PortfolioPath, PortfolioState, iter_portfolio,
                        simulate_volatility)


class ScenarioError(ValueError):
    pass


class TestFunctionError(ValueError):
    __test__ = False  # keep pytest from collecting it


@dataclass(frozen=True)
class ComparisonReport:
    scenario: str
    metric: str
    observed: float
    reference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.observed - self.reference) <= self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def first_passage_oracle(x0: float, mu: float, sigma_bar: float, t):
    """P(inf_{s≤t} (x0 + μs + σ̄W_s) ≤ 0) by the reflection principle."""
    if x0 <= 0 or sigma_bar <= 0:
        raise ValueError("x0 and sigma_bar must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be ≥ 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = sigma_bar * np.sqrt(t)
        a = ndtr((-x0 - mu * t) / s)
        b = math.exp(-2.0 * mu * x0 / sigma_bar ** 2) * ndtr((-x0 + mu * t) / s)
    out = np.where(t > 0, a + b, 0.0)
    return float(out) if out.ndim == 0 else out


def ou_conditional_density_oracle(c: CoefficientVector, spec: VolSpec, sigma0: float,
                                  noise: CommonNoisePath, t: float):
    """(mean, variance) of σ_t given the frozen B⁰ path when q is constant.

    The B⁰ integral uses left-point sums over the stored increments.
    """
    if spec.q_const is None:
        raise ScenarioError("the OU oracle needs a constant vol-of-vol function q")
    steps = int(round(t / noise.dt))
    if steps > noise.n_steps or abs(steps * noise.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t = {t} is not on the noise grid")
    xi = c.xi * spec.q_const
    s = noise.dt * np.arange(steps)
    stoch = xi * c.rho2 * float(np.sum(np.exp(-c.k * (t - s)) * noise.increments_B0[:steps]))
    mean = c.theta + (sigma0 - c.theta) * math.exp(-c.k * t) + stoch
    if c.k > 0:
        var = xi ** 2 * (1 - c.rho2 ** 2) * (1 - math.exp(-2 * c.k * t)) / (2 * c.k)
    else:
        var = xi ** 2 * (1 - c.rho2 ** 2) * t
    return mean, var


def gaussian_pdf(y, mean: float, var: float):
    y = np.asarray(y, dtype=float)
    return np.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def l1_to_gaussian(y: np.ndarray, density: np.ndarray, mean: float, var: float) -> float:
    """∫|p − N(mean, var)| over the grid plus the Gaussian mass outside it."""
    ref = gaussian_pdf(y, mean, var)
    sd = math.sqrt(var)
    outside = ndtr((y[0] - mean) / sd) + ndtr(-(y[-1] - mean) / sd)
    return float(np.trapezoid(np.abs(density - ref), y) + outside)


def compare_loss_curves(particle, spde, tolerance: float, scenario: str = "") -> ComparisonReport:
    a = np.asarray(particle, dtype=float)
    b = np.asarray(spde, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"time grids differ: {a.shape} vs {b.shape}")
    dist = float(np.max(np.abs(a - b))) if a.size else 0.0
    return ComparisonReport(scenario, "sup_t |L_particle - L_spde|", dist, 0.0, tolerance)


# -- weak form ----------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """f and its derivatives up to order two, all vectorized in (x, y)."""

    __test__ = False

    f: Callable
    fx: Callable
    fy: Callable
    fxx: Callable
    fyy: Callable
    fxy: Callable
    label: str = "custom"
    joint: Optional[Callable] = None

    def all(self, x, y):
        """(f, fx, fy, fxx, fyy, fxy) at once; uses ``joint`` when supplied."""
        if self.joint is not None:
            return self.joint(x, y)
        return (self.f(x, y), self.fx(x, y), self.fy(x, y), self.fxx(x, y), self.fyy(x, y),
                self.fxy(x, y))


def zero_test_function() -> TestFunction:
    z = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    return TestFunction(z, z, z, z, z, z, "zero")


def default_test_function() -> TestFunction:
    """f(x, y) = (1 − e^{−x}) e^{−y²}."""
    ex = lambda x: np.exp(-x)
    gy = lambda y: np.exp(-y * y)

    def joint(x, y):
        e, g = ex(x), gy(y)
        one = 1 - e
        return (one * g, e * g, -2 * y * one * g, -e * g, (4 * y * y - 2) * one * g,
                -2 * y * e * g)

    return TestFunction(
        f=lambda x, y: (1 - ex(x)) * gy(y),
        fx=lambda x, y: ex(x) * gy(y),
        fy=lambda x, y: (1 - ex(x)) * (-2 * y) * gy(y),
        fxx=lambda x, y: -ex(x) * gy(y),
        fyy=lambda x, y: (1 - ex(x)) * (4 * y * y - 2) * gy(y),
        fxy=lambda x, y: ex(x) * (-2 * y) * gy(y),
        label="(1-exp(-x))exp(-y^2)",
        joint=joint,
    )


def check_test_function(f: TestFunction, probe=None) -> None:
    probe = np.linspace(-10, 10, 201) if probe is None else np.asarray(probe, dtype=float)
    vals = np.asarray(f.f(np.zeros_like(probe), probe), dtype=float)
    bad = np.abs(vals) > 1e-12
    if bad.any():
        raise TestFunctionError(
            f"test function must vanish on x = 0; f(0, {probe[np.argmax(bad)]!r}) = "
            f"{vals[np.argmax(bad)]!r}")


def weak_form_residual(states: Iterable[PortfolioState], c: CoefficientVector, spec: VolSpec,
                       noise: CommonNoisePath, f: TestFunction, *, signed: bool = False) -> float:
    """⟨v_t,f⟩ − ⟨v_0,f⟩ − ∫⟨v_s,Af⟩ds − ρ₁∫⟨v_s,hf_x⟩dW⁰ − ξρ₂∫⟨v_s,qf_y⟩dB⁰.

    ``states`` must be consecutive steps on the noise grid (a generator from
    ``iter_portfolio`` works and avoids storing them). The integrals are
    left-point sums with the stored increments; ⟨v_s,·⟩ averages over survivors
    divided by N. The cross coefficient in A is ξρ₃ρ₁ρ₂ (independent
    idiosyncratic noises).
    """
    check_test_function(f)
    if isinstance(states, PortfolioPath):
        states = states.states
    dt = noise.dt
    cross = c.standard_rho
    first = last = None
    integral = 0.0
    prev = None
    for state in states:
        X, S, alive, n = state.X, state.sigma, state.alive, state.n
        if prev is not None:
            idx, drift, mw, mb = prev
            if state.step != idx + 1:
                raise ValueError("states must be consecutive time steps")
            integral += drift * dt + mw * noise.increments_W0[idx] + mb * noise.increments_B0[idx]
        xa, ya = X[alive], S[alive]
        h = spec.h(ya)
        q = spec.q(ya)
        fv, fx, fy, fxx, fyy, fxy = f.all(xa, ya)
        fv = float(np.sum(fv)) / n
        if first is None:
            first = fv
        last = fv
        h2 = h * h
        Af = ((c.r - 0.5 * h2) * fx + c.k * (c.theta - ya) * fy + 0.5 * h2 * fxx
              + 0.5 * c.xi ** 2 * q * q * fyy + cross * h * q * fxy)
        prev = (state.step, float(np.sum(Af)) / n, c.rho1 * float(np.sum(h * fx)) / n,
                c.xi * c.rho2 * float(np.sum(q * fy)) / n)
    if first is None:
        raise ValueError("states must be non-empty")
    res = last - first - integral
    return res if signed else abs(res)


def weak_form_run(c: CoefficientVector, spec: VolSpec, init, noise: CommonNoisePath, seed: int,
                  f: Optional[TestFunction] = None, *, signed: bool = True) -> float:
    """Simulate and accumulate the weak-form residual without storing the path."""
    f = default_test_function() if f is None else f
    return weak_form_residual(iter_portfolio(c, spec, init, noise, seed), c, spec, noise, f,
                              signed=signed)


# -- moments --------------------------------------------------------------------

def alpha_moment_diagnostic(grid, alpha: float) -> float:
    """∫∫ |y|^α u² dx dy by the trapezoid rule."""
    if alpha < 0:
        raise ValueError("alpha must be ≥ 0")
    y = grid.y_nodes
    weight = np.abs(y) ** alpha if alpha > 0 else np.ones_like(y)
    return float(np.trapezoid(np.trapezoid(grid.values ** 2 * weight[None, :], y, axis=1),
                              grid.x_nodes))


@dataclass(frozen=True)
class SupMoment:
    p: float
    estimate: float
    half_estimate: float
    standard_error: float
    n_paths: int

    @property
    def relative_change(self) -> float:
        return abs(self.estimate - self.half_estimate) / abs(self.estimate)


def sup_moment(c: CoefficientVector, spec: VolSpec, sigma0: float, *, p: float = 8.0,
               T: float = 1.0, dt: float = 1e-3, n_paths: int = 20000, seed: int = 0) -> SupMoment:
    """Monte Carlo E[sup_{t≤T} |σ_t|^p] on ``n_paths`` unconditional Euler paths,
    along with the estimate from the first half of them (doubling check)."""
    steps = int(round(T / dt))
    _, sup = simulate_volatility(c, spec, sigma0, n_paths, seed, dt=dt, n_steps=steps,
                                 record=False)
    vals = sup ** p
    half = vals[: n_paths // 2]
    return SupMoment(p, float(vals.mean()), float(half.mean()),
                     float(vals.std(ddof=1) / math.sqrt(n_paths)), n_paths)


def ensemble_stats(values: Sequence[float]):
    """(mean, standard error) over an ensemble, reduced in the given order."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two ensemble members")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))
