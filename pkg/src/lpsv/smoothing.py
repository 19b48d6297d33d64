"""Transformed heat kernel φ_ε(z, y) = N(Q(z) − y; 0, ε), the smoothing operators
built from it, their ε → 0 limits, and a discrete energy-identity diagnostic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .lamperti import LampertiMap
from .model import CoefficientVector, VolSpec

TRUNCATION = 8.0  # kernel cut at this many standard deviations
MIN_POINTS_PER_SD = 8


class ResolutionError(ValueError):
    pass


def _trap_weights(grid: np.ndarray) -> np.ndarray:
    d = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(frozen=True)
class TransformedKernel:
    epsilon: float
    map: LampertiMap

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def sd(self) -> float:
        return math.sqrt(self.epsilon)

    def __call__(self, z, y):
        return self.matrices(np.atleast_1d(z), np.atleast_1d(y), order=0)[0]

    def matrices(self, z_grid: np.ndarray, y_grid: np.ndarray, order: int = 2):
        """φ_ε and its first ``order`` y-derivatives as (nz, ny) arrays, truncated at 8 sd."""
        v = np.asarray(self.map.Q(z_grid), dtype=float).reshape(-1)
        d = v[:, None] - np.asarray(y_grid, dtype=float)[None, :]
        eps = self.epsilon
        phi = np.exp(-0.5 * d * d / eps) / math.sqrt(2 * math.pi * eps)
        phi[np.abs(d) > TRUNCATION * self.sd] = 0.0
        out = [phi]
        if order >= 1:
            out.append(d / eps * phi)
        if order >= 2:
            out.append((d * d / eps ** 2 - 1.0 / eps) * phi)
        return out

    def check_resolution(self, z_grid: np.ndarray) -> None:
        """At least 8 grid points per kernel standard deviation in z, which is √ε·q(z) ≥ √ε·m_q."""
        dz = float(np.max(np.diff(z_grid)))
        sd_z = self.sd * self.map.spec.q_min
        if dz * MIN_POINTS_PER_SD > sd_z * (1 + 1e-12):
            raise ResolutionError(
                f"z-grid spacing {dz:.3g} gives fewer than {MIN_POINTS_PER_SD} points per "
                f"kernel sd {sd_z:.3g}")

    def mass(self, y, z_grid: np.ndarray) -> np.ndarray:
        """∫ φ_ε(z, y)/q(z) dz, i.e. ∫ φ_ε(Q⁻¹(v), y) dv after substitution; should be 1."""
        phi = self.matrices(z_grid, np.atleast_1d(y), order=0)[0]
        return (_trap_weights(z_grid) / self.map.spec.q(z_grid)) @ phi


@dataclass(frozen=True)
class SmoothedField:
    values: np.ndarray
    y_grid: np.ndarray
    epsilon: Optional[float]
    g_label: str = "1"
    d1: Optional[np.ndarray] = None
    d2: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("smoothed field has non-finite values")


def _label(g) -> str:
    if g is None:
        return "1"
    return getattr(g, "__name__", "g")


def smooth(u, g: Optional[Callable], kernel: TransformedKernel, y_grid, *, z_grid,
           derivatives: bool = True) -> SmoothedField:
    """I_{ε,g}(λ, y) = ∫ g(z) u(λ, z) φ_ε(z, y) dz by the trapezoid rule on ``z_grid``.

    ``u`` has shape (n_λ, n_z) or (n_z,); u is taken as 0 outside the z-grid.
    y-derivatives come from differentiating the kernel, not u.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    kernel.check_resolution(z_grid)
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 1
    U = np.atleast_2d(u)
    if U.shape[1] != z_grid.size:
        raise ValueError(f"u has {U.shape[1]} z-samples, z_grid has {z_grid.size}")
    weights = _trap_weights(z_grid)
    if g is not None:
        weights = weights * np.asarray(g(z_grid), dtype=float)
    mats = kernel.matrices(z_grid, y_grid, order=2 if derivatives else 0)
    Uw = U * weights[None, :]
    out = [Uw @ m for m in mats]
    if squeeze:
        out = [o[0] for o in out]
    return SmoothedField(out[0], y_grid, kernel.epsilon, _label(g),
                         out[1] if derivatives else None, out[2] if derivatives else None)


def limit_J(u, m: LampertiMap, y_grid, *, z_grid, du=None) -> SmoothedField:
    """J_u(λ, y) = q(Q⁻¹(y))·u(λ, Q⁻¹(y)) for y ∈ Q(D), 0 elsewhere, with u linearly
    interpolated. If the z-derivative ``du`` is given, the y-derivative
    q(z)·(q'(z)u + q(z)u_z) at z = Q⁻¹(y) is returned as ``d1``."""
    z_grid = np.asarray(z_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    u = np.asarray(u, dtype=float)
    squeeze = u.ndim == 1
    U = np.atleast_2d(u)
    z = np.atleast_1d(m.inverse_Q(y_grid))
    inside = (z >= z_grid[0]) & (z <= z_grid[-1])
    qz = m.spec.q(z)
    vals = np.array([np.interp(z, z_grid, row) for row in U]) * qz[None, :]
    vals[:, ~inside] = 0.0
    d1 = None
    if du is not None:
        DU = np.atleast_2d(np.asarray(du, dtype=float))
        d1 = qz[None, :] * (m.spec.dq(z)[None, :] * np.array([np.interp(z, z_grid, r) for r in U])
                            + qz[None, :] * np.array([np.interp(z, z_grid, r) for r in DU]))
        d1[:, ~inside] = 0.0
    if squeeze:
        vals = vals[0]
        d1 = None if d1 is None else d1[0]
    return SmoothedField(vals, y_grid, None, "limit", d1, None)


def l2_distance(a: np.ndarray, b: np.ndarray, y_grid: np.ndarray,
                lam_weights: Optional[np.ndarray] = None) -> float:
    """Discrete L² distance over (λ, y): trapezoid in y, ``lam_weights`` (default 1) over λ."""
    diff = np.atleast_2d(a - b)
    per_row = (diff * diff) @ _trap_weights(np.asarray(y_grid, dtype=float))
    if lam_weights is None:
        lam_weights = np.ones(per_row.size)
    return float(math.sqrt(max(float(per_row @ lam_weights), 0.0)))


@dataclass(frozen=True)
class ConvergenceRow:
    epsilon: float
    distance: float
    d1_distance: Optional[float] = None


def convergence_study(u, m: LampertiMap, epsilons: Sequence[float], *, z_grid, y_grid,
                      du=None, lam_weights=None) -> list:
    """‖J_{u,ε} − J_u‖ (and the same for ∂_y when ``du`` is given) along ``epsilons``."""
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be positive and strictly decreasing")
    limit = limit_J(u, m, y_grid, z_grid=z_grid, du=du)
    rows = []
    for e in eps:
        field_ = smooth(u, None, TransformedKernel(e, m), y_grid, z_grid=z_grid)
        d = l2_distance(field_.values, limit.values, y_grid, lam_weights)
        d1 = (l2_distance(field_.d1, limit.d1, y_grid, lam_weights)
              if limit.d1 is not None else None)
        rows.append(ConvergenceRow(e, d, d1))
    return rows


def preset_profiles(z_grid, bump_sd: float = 0.5) -> dict:
    """Three z-profiles with exact z-derivatives: name -> (u, du).

    A Gaussian bump of sd ``bump_sd``, the compact C² bump (1 − z²)³ on |z| < 1, and an
    asymmetric two-bump mixture.
    """
    z = np.asarray(z_grid, dtype=float)
    g = np.exp(-0.5 * (z / bump_sd) ** 2)
    inside = np.abs(z) < 1
    one = np.where(inside, 1 - z * z, 0.0)
    a = np.exp(-0.5 * ((z - 1) / 0.4) ** 2)
    b = 0.5 * np.exp(-0.5 * ((z + 1) / 0.3) ** 2)
    return {
        "gaussian": (g, -z / bump_sd ** 2 * g),
        "compact": (one ** 3, -6 * z * one ** 2),
        "mixture": (a + b, -(z - 1) / 0.16 * a - (z + 1) / 0.09 * b),
    }


# -- energy identity ----------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    """Spatial weight through w² and (w²)'."""

    w2: Callable
    dw2: Callable
    label: str = "custom"


def default_weight() -> Weight:
    """w(x) = √min(x, 1): its square has derivative 1 on [0, 1) and 0 beyond."""
    return Weight(lambda x: np.minimum(np.asarray(x, dtype=float), 1.0),
                  lambda x: (np.asarray(x, dtype=float) < 1.0).astype(float),
                  "sqrt(min(x,1))")


def _weight_from(w) -> Weight:
    if w is None:
        return default_weight()
    if isinstance(w, Weight):
        return w

    def w2(x):
        return np.asarray(w(x), dtype=float) ** 2

    def dw2(x):
        x = np.asarray(x, dtype=float)
        return np.gradient(w2(x), x)

    return Weight(w2, dw2, getattr(w, "__name__", "custom"))


TERM_NAMES = ("lhs", "initial", "r_strip", "h2_transport", "k_theta_Qp", "xi2_qp",
              "k_zQp", "h2_dx_dx", "h2_strip", "rho1_sq", "xi2_dy_sq", "cross")


@dataclass(frozen=True)
class EnergyIdentity:
    terms: dict
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), abs(self.rhs), 1e-30)

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.terms.values())


def _path_terms(series, c: CoefficientVector, spec: VolSpec, kernel: TransformedKernel,
                U0, weight: Weight) -> dict:
    snaps = list(series.snapshots)
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    times = np.array([s.t for s in snaps])
    x = snaps[0].x_nodes
    z = snaps[0].y_nodes
    y = z
    kernel.check_resolution(z)
    wx = _trap_weights(x)
    wy = _trap_weights(y)
    w2 = weight.w2(x)
    dw2 = weight.dw2(x)
    qz = spec.q(z)
    hz = spec.h(z)
    mults = {"1": np.ones_like(z), "h": hz, "h2": hz * hz, "Qp": 1.0 / qz, "zQp": z / qz,
             "qp": spec.dq(z)}
    phi, dphi = kernel.matrices(z, y, order=1)
    wz = _trap_weights(z)
    K = {g: (wz * v)[:, None] * phi for g, v in mults.items()}
    K1 = wz[:, None] * dphi

    def inner(a, b, wt):
        return float(wt @ (a * b) @ wy)

    def snapshot_terms(U):
        I = U @ K["1"]
        Iy = U @ K1
        Ix_h2 = np.gradient(U @ K["h2"], x, axis=0)
        Ix_h = np.gradient(U @ K["h"], x, axis=0)
        Ix = np.gradient(I, x, axis=0)
        ww = wx * w2
        ws = wx * dw2
        return {
            "r_strip": c.r * inner(I, I, ws),
            "h2_transport": inner(Ix_h2, I, ww),
            "k_theta_Qp": 2 * c.k * c.theta * inner(U @ K["Qp"], Iy, ww),
            "xi2_qp": -c.xi ** 2 * inner(U @ K["qp"], Iy, ww),
            "k_zQp": -2 * c.k * inner(U @ K["zQp"], Iy, ww),
            "h2_dx_dx": -inner(Ix_h2, Ix, ww),
            "h2_strip": -inner(Ix_h2, I, ws),
            "rho1_sq": c.rho1 ** 2 * inner(Ix_h, Ix_h, ww),
            "xi2_dy_sq": -c.xi ** 2 * (1 - c.rho2 ** 2) * inner(Iy, Iy, ww),
            "cross": -2 * (c.rho - c.standard_rho) * inner(Ix_h, Iy, ww),
        }, inner(I, I, wx * w2)

    series_terms = []
    norms = []
    for s in snaps:
        t_terms, nrm = snapshot_terms(s.values)
        series_terms.append(t_terms)
        norms.append(nrm)
    out = {name: float(np.trapezoid([st[name] for st in series_terms], times))
           for name in series_terms[0]}
    U0v = U0.values if hasattr(U0, "values") else np.asarray(U0, dtype=float)
    I0 = U0v @ K["1"]
    out["initial"] = inner(I0, I0, wx * w2)
    out["lhs"] = norms[-1]
    return out


def energy_identity(solutions, c: CoefficientVector, spec: VolSpec, kernel: TransformedKernel,
                    U0, w=None) -> EnergyIdentity:
    """Evaluate every term of the smoothed L²_w energy identity on stored solver output.

    ``solutions`` is one SolveResult or a list of them (one per common-noise
    path); each term is averaged over the list before comparing sides, since
    the identity holds in expectation. Time integrals use the trapezoid rule
    over the stored snapshots.
    """
    if not isinstance(solutions, (list, tuple)):
        solutions = [solutions]
    if not solutions:
        raise ValueError("no solutions given")
    for s in solutions:
        if getattr(s, "increments_W0", None) is None or getattr(s, "increments_B0", None) is None:
            raise ValueError("solution lacks the common-noise increments it was driven by")
    weight = _weight_from(w)
    per_path = [_path_terms(s, c, spec, kernel, U0, weight) for s in solutions]
    terms = {k: float(np.mean([p[k] for p in per_path])) for k in per_path[0]}
    rhs = sum(v for k, v in terms.items() if k != "lhs")
    return EnergyIdentity(terms, terms["lhs"], rhs)


def energy_identity_residual(solutions, c, spec, kernel, U0, w=None) -> float:
    return energy_identity(solutions, c, spec, kernel, U0, w).residual
