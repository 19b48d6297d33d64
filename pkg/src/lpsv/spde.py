"""Explicit finite-difference solver for the conditional-density SPDE

    du = [−(r − h²/2) u_x − (k(θ−y) u)_y + ½h² u_xx + ρ (h q u)_xy + ½ξ² (q² u)_yy] dt
         − ρ₁ h u_x dW⁰ − ξρ₂ (q u)_y dB⁰

on [0, X_max] × [y_min, y_max] with homogeneous Dirichlet data on every edge
(x = 0 is the absorbing default boundary, the others are truncation edges).
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .initial import ProductInitial
from .model import CoefficientVector, VolSpec, check_correlation_condition
from .particles import CommonNoisePath, NumericDivergenceError

SCHEMES = ("lie-splitting", "explicit")
DUMP_MAGIC = b"LPSV"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sBII5d")


class ConfigurationError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class CorrelationConditionError(ConfigurationError):
    """The SPDE coefficients violate the parabolicity (uniqueness) condition."""


@dataclass(frozen=True)
class SolverConfig:
    dx: float
    dy: float
    dt: float
    X_max: float
    y_min: float
    y_max: float
    scheme: str = "lie-splitting"
    cfl_safety: float = 0.9

    def __post_init__(self):
        for name in ("dx", "dy", "dt", "X_max"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.y_max > self.y_min:
            raise ConfigurationError("y_max must exceed y_min")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if not 0 < self.cfl_safety < 1:
            raise ConfigurationError("cfl_safety must lie in (0, 1)")
        if self.X_max < 2 * self.dx or self.y_max - self.y_min < 2 * self.dy:
            raise ConfigurationError("box must contain at least one interior node per axis")

    @property
    def x_nodes(self) -> np.ndarray:
        n = max(2, int(round(self.X_max / self.dx)))
        return np.linspace(0.0, self.X_max, n + 1)

    @property
    def y_nodes(self) -> np.ndarray:
        n = max(2, int(round((self.y_max - self.y_min) / self.dy)))
        return np.linspace(self.y_min, self.y_max, n + 1)


def default_box(c: CoefficientVector, spec: VolSpec, x0_bar: float, T: float):
    """(X_max, y_min, y_max) = (10(x̄₀ + h_max√T), θ ∓ 8ξM_q/√(2k))."""
    X_max = 10.0 * (x0_bar + spec.h_max * math.sqrt(T))
    if c.k > 0 and c.xi > 0:
        half = 8.0 * c.xi * spec.q_max / math.sqrt(2.0 * c.k)
    else:
        half = 1.0
    return X_max, c.theta - half, c.theta + half


def stability_bound(cfg: SolverConfig, c: CoefficientVector, spec: VolSpec) -> float:
    """Largest admissible dt (before the safety factor).

    The rates of the individual explicit stencils are summed, which is stricter
    than taking the minimum over the separate restrictions.
    """
    y = cfg.y_nodes
    dx = cfg.x_nodes[1]
    dy = y[1] - y[0]
    h = spec.h(y)
    q = spec.q(y)
    a = np.abs(c.r - 0.5 * h * h).max()
    b = c.k * np.abs(c.theta - y).max()
    rate = (float((h * h).max()) / dx ** 2 + c.xi ** 2 * float((q * q).max()) / dy ** 2
            + abs(c.rho) * float((h * q).max()) / (dx * dy) + a / dx + b / dy)
    return math.inf if rate == 0 else 1.0 / rate


def check_cfl(cfg: SolverConfig, c: CoefficientVector, spec: VolSpec, dt: Optional[float] = None):
    dt = cfg.dt if dt is None else dt
    bound = cfg.cfl_safety * stability_bound(cfg, c, spec)
    if dt > bound:
        raise ConfigurationError(
            f"CFL violated: dt = {dt!r} > cfl_safety·bound = {bound!r}")


def cfl_dt(cfg_like: SolverConfig, c: CoefficientVector, spec: VolSpec, horizon: float = 1.0) -> float:
    """Largest dt satisfying the CFL check that divides ``horizon`` evenly."""
    bound = cfg_like.cfl_safety * stability_bound(cfg_like, c, spec)
    n = max(1, math.ceil(horizon / bound))
    return horizon / n


@dataclass
class DensityGrid:
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    values: np.ndarray
    t: float = 0.0
    warnings: tuple = ()

    @property
    def shape(self):
        return self.values.shape

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def dy(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.x_nodes, self.y_nodes, self.values.copy(), self.t, self.warnings)

    def with_values(self, values: np.ndarray, t: Optional[float] = None) -> "DensityGrid":
        return DensityGrid(self.x_nodes, self.y_nodes, values, self.t if t is None else t,
                           self.warnings)


def hat_weights(nodes: np.ndarray, point: float) -> np.ndarray:
    """Nodal density of a unit point mass spread linearly over its two neighbours."""
    h = nodes[1] - nodes[0]
    w = np.zeros(nodes.size)
    s = (point - nodes[0]) / h
    j = int(min(max(math.floor(s), 0), nodes.size - 2))
    frac = s - j
    w[j] = (1 - frac) / h
    w[j + 1] = frac / h
    return w


def _pin(values: np.ndarray) -> np.ndarray:
    values[0, :] = 0.0
    values[-1, :] = 0.0
    values[:, 0] = 0.0
    values[:, -1] = 0.0
    return values


def grid_mass(x: np.ndarray, y: np.ndarray, values: np.ndarray) -> float:
    return float(np.trapezoid(np.trapezoid(values, y, axis=1), x))


def init_solver(cfg: SolverConfig, c: CoefficientVector, spec: VolSpec,
                u0: Union[Callable, np.ndarray, ProductInitial]) -> DensityGrid:
    """Sample ``u0`` on the grid with zero boundary edges, renormalized to unit mass.

    ``u0`` is a callable f(X, Y) on meshgrids or a nodal array. A ProductInitial
    preset also works; its point masses are projected with hat functions.
    """
    x, y = cfg.x_nodes, cfg.y_nodes
    if isinstance(u0, ProductInitial):
        fx = u0.x_density(x) if u0.x_kind == "rayleigh" else hat_weights(x, u0.x0)
        fy = u0.y_density(y) if u0.y_sd > 0 else hat_weights(y, u0.y_mean)
        values = np.outer(fx, fy)
    elif callable(u0):
        X, Y = np.meshgrid(x, y, indexing="ij")
        values = np.asarray(u0(X, Y), dtype=float)
    else:
        values = np.array(u0, dtype=float)
    if values.shape != (x.size, y.size):
        raise ValueError(f"u0 has shape {values.shape}, grid is {(x.size, y.size)}")
    if not np.all(np.isfinite(values)):
        raise DegenerateInputError("u0 has non-finite values")
    if np.any(values < 0):
        raise DegenerateInputError("u0 must be nonnegative")
    values = _pin(values.copy())
    mass = grid_mass(x, y, values)
    if mass <= 0:
        raise DegenerateInputError("u0 has zero mass on the truncated domain")
    values /= mass
    notes = []
    support = values > 0
    if support.any(axis=1).sum() < 4 or support.any(axis=0).sum() < 4:
        notes.append("initial density concentrated on fewer than 4 nodes per axis")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    return DensityGrid(x, y, values, 0.0, tuple(notes))


@dataclass(frozen=True)
class _Coefficients:
    a_pos: np.ndarray
    a_neg: np.ndarray
    half_h2: np.ndarray
    b_face_pos: np.ndarray
    b_face_neg: np.ndarray
    q: np.ndarray
    q2: np.ndarray
    hq: np.ndarray
    h: np.ndarray
    c: CoefficientVector


def _coefficients(c: CoefficientVector, spec: VolSpec, y: np.ndarray) -> _Coefficients:
    h = np.asarray(spec.h(y), dtype=float)
    q = np.asarray(spec.q(y), dtype=float)
    a = c.r - 0.5 * h * h
    y_face = 0.5 * (y[:-1] + y[1:])
    b = c.k * (c.theta - y_face)
    return _Coefficients(np.maximum(a, 0.0)[None, 1:-1], np.minimum(a, 0.0)[None, 1:-1],
                         (0.5 * h * h)[None, 1:-1], np.maximum(b, 0.0), np.minimum(b, 0.0),
                         q, q * q, h * q, h, c)


def _deterministic_rate(U: np.ndarray, co: _Coefficients, dx: float, dy: float) -> np.ndarray:
    """Right-hand side of the dt-part on interior nodes."""
    c = co.c
    inner = U[1:-1, 1:-1]
    # upwind x transport, row coefficient a(y) = r − h²/2
    dm = (inner - U[:-2, 1:-1]) / dx
    dp = (U[2:, 1:-1] - inner) / dx
    rate = -(co.a_pos * dm + co.a_neg * dp)
    # conservative upwind y transport with face velocities k(θ − y)
    flux = co.b_face_pos * U[:, :-1] + co.b_face_neg * U[:, 1:]
    rate -= (flux[1:-1, 1:] - flux[1:-1, :-1]) / dy
    rate += co.half_h2 * (U[2:, 1:-1] - 2 * inner + U[:-2, 1:-1]) / dx ** 2
    if c.xi != 0.0:
        G = co.q2[None, :] * U
        rate += 0.5 * c.xi ** 2 * (G[1:-1, 2:] - 2 * G[1:-1, 1:-1] + G[1:-1, :-2]) / dy ** 2
    if c.rho != 0.0:
        H = co.hq[None, :] * U
        rate += c.rho * (H[2:, 2:] - H[2:, :-2] - H[:-2, 2:] + H[:-2, :-2]) / (4 * dx * dy)
    return rate


def _stochastic_increment(U: np.ndarray, co: _Coefficients, dx: float, dy: float,
                          dW0: float, dB0: float) -> np.ndarray:
    c = co.c
    out = np.zeros((U.shape[0] - 2, U.shape[1] - 2))
    if c.rho1 != 0.0 and dW0 != 0.0:
        out -= (c.rho1 * dW0) * co.h[None, 1:-1] * (U[2:, 1:-1] - U[:-2, 1:-1]) / (2 * dx)
    if c.rho2 != 0.0 and c.xi != 0.0 and dB0 != 0.0:
        G = co.q[None, :] * U
        out -= (c.xi * c.rho2 * dB0) * (G[1:-1, 2:] - G[1:-1, :-2]) / (2 * dy)
    return out


class SPDESolver:
    """Holds the per-row coefficients so repeated steps avoid re-evaluating q and h."""

    def __init__(self, cfg: SolverConfig, c: CoefficientVector, spec: VolSpec, *,
                 enforce_correlation: bool = True):
        if enforce_correlation and not check_correlation_condition(c):
            raise CorrelationConditionError(
                "|rho − xi·rho3·rho1·rho2| > xi·√(1−rho1²)·√(1−rho2²): the SPDE is not "
                "parabolic and its solution need not be unique")
        check_cfl(cfg, c, spec)
        self.cfg, self.c, self.spec = cfg, c, spec
        self.x, self.y = cfg.x_nodes, cfg.y_nodes
        self.dx = float(self.x[1] - self.x[0])
        self.dy = float(self.y[1] - self.y[0])
        self._co = _coefficients(c, spec, self.y)

    def init(self, u0) -> DensityGrid:
        return init_solver(self.cfg, self.c, self.spec, u0)

    def step_values(self, U: np.ndarray, dW0: float, dB0: float, dt: float) -> np.ndarray:
        co, dx, dy = self._co, self.dx, self.dy
        new = U.copy()
        if self.cfg.scheme == "lie-splitting":
            new[1:-1, 1:-1] += dt * _deterministic_rate(U, co, dx, dy)
            _pin(new)
            if dW0 != 0.0 or dB0 != 0.0:
                new[1:-1, 1:-1] += _stochastic_increment(new, co, dx, dy, dW0, dB0)
        else:
            new[1:-1, 1:-1] += (dt * _deterministic_rate(U, co, dx, dy)
                                + _stochastic_increment(U, co, dx, dy, dW0, dB0))
        _pin(new)
        if not np.all(np.isfinite(new)):
            raise NumericDivergenceError("non-finite density after SPDE step")
        return new

    def advance(self, grid: DensityGrid, dW0: float, dB0: float, dt: Optional[float] = None
                ) -> DensityGrid:
        dt = self.cfg.dt if dt is None else dt
        if dt != self.cfg.dt:
            check_cfl(self.cfg, self.c, self.spec, dt)
        return grid.with_values(self.step_values(grid.values, dW0, dB0, dt), grid.t + dt)


def advance(grid: DensityGrid, c: CoefficientVector, spec: VolSpec, dW0: float, dB0: float,
            dt: float, cfg: Optional[SolverConfig] = None) -> DensityGrid:
    """One step of the scheme on ``grid``; builds a throwaway solver (use SPDESolver in loops)."""
    if cfg is None:
        cfg = SolverConfig(dx=grid.dx, dy=grid.dy, dt=dt, X_max=float(grid.x_nodes[-1]),
                           y_min=float(grid.y_nodes[0]), y_max=float(grid.y_nodes[-1]))
    else:
        cfg = replace(cfg, dt=dt)
    return SPDESolver(cfg, c, spec).advance(grid, dW0, dB0, dt)


def survival_mass(grid: DensityGrid) -> float:
    return grid_mass(grid.x_nodes, grid.y_nodes, grid.values)


@dataclass
class SolveResult:
    times: np.ndarray
    mass: np.ndarray
    snapshots: list = field(default_factory=list)
    min_ratio: float = 0.0
    increments_W0: Optional[np.ndarray] = None
    increments_B0: Optional[np.ndarray] = None

    @property
    def loss(self) -> np.ndarray:
        return 1.0 - self.mass


def solve(cfg: SolverConfig, c: CoefficientVector, spec: VolSpec, u0,
          noise: CommonNoisePath, *, T: Optional[float] = None,
          record_every: Optional[int] = None, enforce_correlation: bool = True) -> SolveResult:
    """Integrate over the noise path; the solver step must equal noise.dt or a multiple of it.

    Mass is kept at every step; grid snapshots every ``record_every`` steps
    (plus the first and last). ``min_ratio`` tracks min(u)/max(u) over time.
    """
    ratio = cfg.dt / noise.dt
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9:
        raise ConfigurationError(
            f"solver dt {cfg.dt!r} must be a positive multiple of noise dt {noise.dt!r}")
    path = noise.coarsen(m) if m > 1 else noise
    steps = path.n_steps if T is None else int(round(T / path.dt))
    if steps > path.n_steps:
        raise ConfigurationError("noise path shorter than the requested horizon")
    solver = SPDESolver(cfg, c, spec, enforce_correlation=enforce_correlation)
    grid = u0 if isinstance(u0, DensityGrid) else solver.init(u0)
    U = grid.values.copy()
    masses = [grid_mass(solver.x, solver.y, U)]
    snaps = [grid.copy()]
    min_ratio = 0.0
    for n in range(steps):
        U = solver.step_values(U, path.increments_W0[n], path.increments_B0[n], cfg.dt)
        masses.append(grid_mass(solver.x, solver.y, U))
        top = U.max()
        if top > 0:
            min_ratio = min(min_ratio, U.min() / top)
        if (record_every and (n + 1) % record_every == 0) or n + 1 == steps:
            snaps.append(grid.with_values(U.copy(), (n + 1) * cfg.dt))
    return SolveResult(cfg.dt * np.arange(steps + 1), np.array(masses), snaps, min_ratio,
                       path.increments_W0[:steps].copy(), path.increments_B0[:steps].copy())


def mixture_loss(series: Sequence[Union[SolveResult, Sequence[float], np.ndarray]],
                 weights: Sequence[float]) -> np.ndarray:
    """1 − Σ wᵢ·massᵢ(t) over solvers sharing a time grid."""
    weights = np.asarray(weights, dtype=float)
    if len(series) != weights.size or weights.size == 0:
        raise ValueError("need one weight per solver")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
    masses = []
    for s in series:
        if isinstance(s, SolveResult):
            masses.append(s.mass)
        elif len(s) and isinstance(s[0], DensityGrid):
            masses.append(np.array([survival_mass(g) for g in s]))
        else:
            masses.append(np.asarray(s, dtype=float))
    shapes = {m.shape for m in masses}
    if len(shapes) != 1:
        raise ValueError(f"mismatched time grids: {sorted(shapes)}")
    return 1.0 - weights @ np.vstack(masses)


# -- export -------------------------------------------------------------------

def dump_grid(grid: DensityGrid, path) -> None:
    """Binary layout (little endian): b"LPSV", version byte, nx, ny as uint32 (node
    counts), then t, x_min, x_max, y_min, y_max as float64, then nx·ny float64 row-major."""
    nx, ny = grid.values.shape
    header = _HEADER.pack(DUMP_MAGIC, DUMP_VERSION, nx, ny, float(grid.t),
                          float(grid.x_nodes[0]), float(grid.x_nodes[-1]),
                          float(grid.y_nodes[0]), float(grid.y_nodes[-1]))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_grid(path) -> DensityGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated grid dump")
    magic, version, nx, ny, t, x0, x1, y0, y1 = _HEADER.unpack_from(data)
    if magic != DUMP_MAGIC:
        raise ValueError("not an LPSV grid dump")
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != nx * ny:
        raise ValueError("grid dump body has the wrong length")
    return DensityGrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny),
                       body.reshape(nx, ny).copy(), t)


def grid_csv_lines(grid: DensityGrid):
    yield "t,x,y,u"
    t = repr(float(grid.t))
    for i, xv in enumerate(grid.x_nodes):
        xs = repr(float(xv))
        for j, yv in enumerate(grid.y_nodes):
            yield f"{t},{xs},{float(yv)!r},{float(grid.values[i, j])!r}"
