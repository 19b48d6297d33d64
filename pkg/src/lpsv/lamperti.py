"""The transform Q(y) = ∫_0^y dz/q(z) with its transformed drift V.

Also closed-form Malliavin derivatives of the volatility and their bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import CoefficientVector, VolSpec


class NumericError(ArithmeticError):
    pass


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class LampertiMap:
    """Q and its inverse for a fixed VolSpec, bound to one coefficient vector.

    ``panel`` is the widest sub-interval handed to the 16-point Gauss-Legendre
    rule; ``tol`` is the tolerance of the inverse.
    """

    spec: VolSpec
    coeffs: CoefficientVector
    tol: float = 1e-12
    panel: float = 0.25

    # -- Q and its inverse -------------------------------------------------
    def Q(self, y):
        """∫_0^y dz/q(z), elementwise."""
        y_arr = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y_arr)):
            raise ValueError("transform_Q needs finite input")
        if self.spec.q_const is not None:
            out = y_arr / self.spec.q_const
            return float(out) if out.ndim == 0 else out
        flat = y_arr.ravel()
        order = np.argsort(flat)
        pts = flat[order]
        # integrate 1/q between consecutive sorted points (and 0), then accumulate
        nodes = np.unique(np.concatenate([pts, [0.0]]))
        pieces = self._segments(nodes[:-1], nodes[1:])
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        cum -= cum[np.searchsorted(nodes, 0.0)]
        out = np.empty_like(flat)
        out[order] = cum[np.searchsorted(nodes, pts)]
        out = out.reshape(y_arr.shape)
        return float(out) if out.ndim == 0 else out

    def _segments(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """∫_a^b dz/q(z) for each pair, by composite 16-point Gauss-Legendre."""
        if a.size == 0:
            return np.zeros(0)
        counts = np.maximum(1, np.ceil((b - a) / self.panel).astype(int))
        owner = np.repeat(np.arange(a.size), counts)
        offset = np.arange(owner.size) - np.repeat(np.cumsum(counts) - counts, counts)
        width = (b - a)[owner] / counts[owner]
        left = a[owner] + offset * width
        half = 0.5 * width
        z = (left + half)[:, None] + half[:, None] * _GL_NODES[None, :]
        panel_vals = half * ((1.0 / self.spec.q(z)) @ _GL_WEIGHTS)
        return np.bincount(owner, weights=panel_vals, minlength=a.size)

    def inverse_Q(self, v):
        """The unique y with Q(y) = v (safeguarded Newton inside a bracket)."""
        v_arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v_arr)):
            raise ValueError("inverse_Q needs finite input")
        if self.spec.q_const is not None:
            out = v_arr * self.spec.q_const
            return float(out) if out.ndim == 0 else out
        flat = v_arr.ravel()
        # Q(0) = 0 and 1/M_q ≤ Q' ≤ 1/m_q give the bracket [m_q v, M_q v] (ordered)
        lo = np.minimum(self.spec.q_min * flat, self.spec.q_max * flat)
        hi = np.maximum(self.spec.q_min * flat, self.spec.q_max * flat)
        lo, hi = self._expand_bracket(flat, lo - 1e-12, hi + 1e-12)
        y = 0.5 * (lo + hi)
        for _ in range(100):
            f = self.Q(y) - flat
            lo = np.where(f < 0, y, lo)
            hi = np.where(f > 0, y, hi)
            step = f * self.spec.q(y)
            y_new = y - step
            outside = (y_new <= lo) | (y_new >= hi)
            y_new = np.where(outside, 0.5 * (lo + hi), y_new)
            if np.all(np.abs(y_new - y) <= self.tol * (1.0 + np.abs(y_new))):
                y = y_new
                break
            y = y_new
        else:
            raise NumericError("inverse_Q did not converge")
        out = y.reshape(v_arr.shape)
        return float(out) if out.ndim == 0 else out

    def _expand_bracket(self, v, lo, hi, max_doublings: int = 60):
        # the declared bounds normally bracket already; expand if they were wrong
        for _ in range(max_doublings):
            flo = self.Q(lo) - v
            fhi = self.Q(hi) - v
            bad_lo = flo > 0
            bad_hi = fhi < 0
            if not (bad_lo.any() or bad_hi.any()):
                return lo, hi
            width = np.maximum(hi - lo, 1.0)
            lo = np.where(bad_lo, lo - width, lo)
            hi = np.where(bad_hi, hi + width, hi)
        raise NumericError("root bracket for inverse_Q not found")

    # -- transformed drift ---------------------------------------------------
    def drift_at_level(self, z):
        """(V, V', V'') evaluated at x = Q(z), written in terms of the level z = Q⁻¹(x)."""
        c, s = self.coeffs, self.spec
        z = np.asarray(z, dtype=float)
        q, q1, q2, q3 = s.q(z), s.dq(z), s.d2q(z), s.d3q(z)
        gap = c.theta - z
        V = c.k * gap / q - 0.5 * c.xi ** 2 * q1
        inner = c.k * (-q - gap * q1) / q ** 2 - 0.5 * c.xi ** 2 * q2
        V1 = q * inner
        V2 = (q * q1 * inner + 2.0 * c.k * q1
              - c.k * gap * (q2 - 2.0 * q1 ** 2 / q)
              - 0.5 * c.xi ** 2 * q3 * q ** 2)
        return V, V1, V2

    def drift_V(self, x):
        """(V(x), V'(x), V''(x)) for the drift of v_t = Q(σ_t)."""
        return self.drift_at_level(self.inverse_Q(x))


def transform_Q(m: LampertiMap, y):
    return m.Q(y)


def inverse_Q(m: LampertiMap, v):
    return m.inverse_Q(v)


def drift_V(m: LampertiMap, x):
    return m.drift_V(x)


# -- Malliavin derivatives ----------------------------------------------------

def _check_cover(n_points: int, dt: float, *times: float):
    end = (n_points - 1) * dt
    for t in times:
        if t < -1e-12 or t > end * (1 + 1e-12) + 1e-12:
            raise ValueError(f"path grid [0, {end}] does not cover time {t}")


def _interp(values: np.ndarray, dt: float, t: float) -> np.ndarray:
    """Linear interpolation along the last axis of a path sampled at i·dt."""
    n = values.shape[-1]
    pos = min(max(t / dt, 0.0), n - 1.0)
    i = min(int(math.floor(pos)), n - 2) if n > 1 else 0
    frac = pos - i
    if n == 1:
        return values[..., 0]
    return (1.0 - frac) * values[..., i] + frac * values[..., i + 1]


def _cumtrapz(values: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis, starting at 0."""
    out = np.zeros_like(values)
    out[..., 1:] = np.cumsum(0.5 * dt * (values[..., 1:] + values[..., :-1]), axis=-1)
    return out


def _integral(cum: np.ndarray, values: np.ndarray, dt: float, a: float, b: float):
    """∫_a^b of the piecewise-linear interpolant, from its cumulative trapezoid table."""
    return _cum_at(cum, values, dt, b) - _cum_at(cum, values, dt, a)


def _cum_at(cum, values, dt, t):
    n = values.shape[-1]
    pos = min(max(t / dt, 0.0), n - 1.0)
    i = min(int(math.floor(pos)), n - 2)
    frac = pos - i
    v0 = values[..., i]
    v1 = values[..., i + 1]
    # exact integral of the linear interpolant over [t_i, t]
    return cum[..., i] + dt * (frac * v0 + 0.5 * frac * frac * (v1 - v0))


def malliavin_first(m: LampertiMap, sigma_path, dt: float, t_prime: float, t: float):
    """D_{t'} σ_t = ξ√(1−ρ₂²) q(σ_t) exp(∫_{t'}^t V'(Q(σ_s)) ds).

    ``sigma_path`` holds samples at times 0, dt, 2dt, ... along its last axis
    (a 2-D array is treated as a batch of paths). The time integral uses the
    trapezoid rule on the path grid.
    """
    path = np.asarray(sigma_path, dtype=float)
    _check_cover(path.shape[-1], dt, t_prime, t)
    if t < t_prime:
        return np.zeros(path.shape[:-1]) if path.ndim > 1 else 0.0
    c = m.coeffs
    _, V1, _ = m.drift_at_level(path)
    cum = _cumtrapz(V1, dt)
    integral = _integral(cum, V1, dt, t_prime, t)
    sigma_t = _interp(path, dt, t)
    out = c.xi * math.sqrt(1.0 - c.rho2 ** 2) * m.spec.q(sigma_t) * np.exp(integral)
    return float(out) if np.ndim(out) == 0 else out


def malliavin_second(m: LampertiMap, sigma_path, dt: float, t_prime: float,
                     t_doubleprime: float, t: float):
    """D_{t',t''} σ_t from the chain rule applied to the first derivative.

    The product term carries q'(σ_t)q(σ_t); the integral term differentiates
    the exponent, with the inner time integral running over s ≥ max(t', t'')
    (D_{t''}v_s vanishes for s < t'').
    """
    path = np.asarray(sigma_path, dtype=float)
    lo = min(t_prime, t_doubleprime)
    _check_cover(path.shape[-1], dt, lo, t)
    if t < t_prime or t < t_doubleprime:
        return np.zeros(path.shape[:-1]) if path.ndim > 1 else 0.0
    c, s = m.coeffs, m.spec
    _, V1, V2 = m.drift_at_level(path)
    cum1 = _cumtrapz(V1, dt)
    scale = c.xi ** 2 * (1.0 - c.rho2 ** 2)
    sigma_t = _interp(path, dt, t)
    e1 = np.exp(_integral(cum1, V1, dt, t_prime, t))
    e2 = np.exp(_integral(cum1, V1, dt, t_doubleprime, t))
    first = scale * s.dq(sigma_t) * s.q(sigma_t) * e1 * e2

    # ∫_{max(t',t'')}^t V''(v_s) exp(∫_{t''}^s V'(v_r) dr) ds on the path grid
    start = max(t_prime, t_doubleprime)
    base = np.asarray(_cum_at(cum1, V1, dt, t_doubleprime))
    integrand = V2 * np.exp(cum1 - base[..., None])
    cum2 = _cumtrapz(integrand, dt)
    tail = _integral(cum2, integrand, dt, start, t)
    second = scale * s.q(sigma_t) * e1 * tail
    out = first + second
    return float(out) if np.ndim(out) == 0 else out


# -- bounds -------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeBounds:
    b_T_doubleprime: float
    b_T_tilde: float
    b_T_prime: float
    T: float
    max_abs_V1: float
    max_abs_V2: float

    def __post_init__(self):
        if not 0 <= self.b_T_doubleprime <= self.b_T_tilde:
            raise ValueError("derivative bounds must satisfy 0 ≤ b'' ≤ b~")


def probe_drift_extrema(m: LampertiMap, radius: Optional[float] = None,
                        n_probe: int = 4001, safety: float = 1.05):
    """Estimate sup|V'|, sup|V''| and sup|q'| over [Q(θ)−R, Q(θ)+R].

    R defaults to 20ξ/√(2k). For constant q, V' ≡ −k and V'' ≡ 0 exactly, so
    no safety factor is applied there.
    """
    c = m.coeffs
    if m.spec.q_const is not None:
        return c.k, 0.0, 0.0
    if radius is None:
        radius = 20.0 * c.xi / math.sqrt(2.0 * c.k) if c.k > 0 else 20.0 * max(c.xi, 1.0)
    radius = max(radius, 1.0)
    center = m.Q(c.theta)
    levels = m.inverse_Q(np.linspace(center - radius, center + radius, n_probe))
    _, V1, V2 = m.drift_at_level(levels)
    return (safety * float(np.max(np.abs(V1))), safety * float(np.max(np.abs(V2))),
            safety * float(np.max(np.abs(m.spec.dq(levels)))))


def derivative_bounds(m: LampertiMap, T: float, radius: Optional[float] = None,
                      safety: float = 1.05) -> DerivativeBounds:
    """b''_T ≤ D_{t'}σ_t ≤ b~_T and |D_{t',t''}σ_t| ≤ b'_T on [0, T]."""
    if T <= 0:
        raise ValueError("T must be positive")
    c, s = m.coeffs, m.spec
    mv1, mv2, mq1 = probe_drift_extrema(m, radius=radius, safety=safety)
    root = c.xi * math.sqrt(1.0 - c.rho2 ** 2)
    lower = root * s.q_min * math.exp(-T * mv1)
    upper = root * s.q_max * math.exp(T * mv1)
    # |first term| ≤ ξ²(1−ρ₂²) M_|q'| M_q e^{2T M_|V'|};
    # |second| ≤ ξ²(1−ρ₂²) M_q e^{T M_|V'|} · T M_|V''| e^{T M_|V'|}
    prime = root ** 2 * s.q_max * math.exp(2.0 * T * mv1) * (mq1 + T * mv2)
    return DerivativeBounds(lower, upper, prime, T, mv1, mv2)


def density_sup_bound(b: DerivativeBounds, t: float, C: float = 1.0) -> float:
    """(C+2)·√(t² b')/(t b'') + C·√(t b~)/(t b''): the shape C' + C''/√t of the
    conditional density bound. ``C`` is not pinned down; it is a diagnostic knob."""
    if t <= 0:
        raise ValueError("t must be positive")
    if b.b_T_doubleprime <= 0:
        raise ValueError("density bound needs b'' > 0 (xi > 0 and |rho2| < 1)")
    denom = t * b.b_T_doubleprime
    return ((C + 2.0) * math.sqrt(t * t * b.b_T_prime) / denom
            + C * math.sqrt(t * b.b_T_tilde) / denom)
