"""Euler-Maruyama simulation of the N-asset system with absorption at zero,
driven by a shared systemic Brownian pair."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .model import CoefficientVector, VolSpec

# particles sharing one RNG stream; results never depend on worker count
BLOCK_SIZE = 4096


class NumericDivergenceError(ArithmeticError):
    pass


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class CommonNoisePath:
    """Increments of (W⁰, B⁰) on the uniform grid i·dt, with Corr = rho3."""

    dt: float
    increments_W0: np.ndarray
    increments_B0: np.ndarray
    rho3: float
    seed: Optional[int] = None

    def __post_init__(self):
        for arr in (self.increments_W0, self.increments_B0):
            arr.setflags(write=False)
        if self.increments_W0.shape != self.increments_B0.shape:
            raise ValueError("increment arrays must have equal length")

    @property
    def n_steps(self) -> int:
        return int(self.increments_W0.size)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    def coarsen(self, factor: int) -> "CommonNoisePath":
        """Sum consecutive increments: the same Brownian path on a grid factor× coarser."""
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        if factor == 1:
            return self
        w = self.increments_W0.reshape(-1, factor).sum(axis=1)
        b = self.increments_B0.reshape(-1, factor).sum(axis=1)
        return CommonNoisePath(self.dt * factor, w, b, self.rho3, self.seed)

    def truncate(self, n_steps: int) -> "CommonNoisePath":
        return CommonNoisePath(self.dt, self.increments_W0[:n_steps].copy(),
                               self.increments_B0[:n_steps].copy(), self.rho3, self.seed)

    @classmethod
    def zero(cls, dt: float, n_steps: int, rho3: float = 0.0) -> "CommonNoisePath":
        return cls(dt, np.zeros(n_steps), np.zeros(n_steps), rho3, None)


def generate_common_noise(dt: float, n_steps: int, rho3: float, seed: int) -> CommonNoisePath:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not -1.0 <= rho3 <= 1.0:
        raise ValueError("rho3 must lie in [-1, 1]")
    rng = _stream(seed, 0)
    z = rng.standard_normal((2, n_steps)) * math.sqrt(dt)
    dw = z[0]
    # exact copies of ±ΔW⁰ at |rho3| = 1 since the second factor is then 0.0
    db = rho3 * dw + math.sqrt(1.0 - rho3 * rho3) * z[1]
    return CommonNoisePath(dt, dw, db, rho3, seed)


@dataclass
class PortfolioState:
    X: np.ndarray
    sigma: np.ndarray
    alive: np.ndarray
    default_time: np.ndarray
    t: float
    step: int = 0

    @property
    def n(self) -> int:
        return self.X.size

    @property
    def loss(self) -> float:
        return float(np.count_nonzero(~self.alive)) / self.n


@dataclass(frozen=True)
class EmpiricalSnapshot:
    t: float
    loss: float
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    n: int


def empirical_snapshot(state: PortfolioState, x_edges, y_edges) -> EmpiricalSnapshot:
    """Loss and a 2-D histogram of the survivors; survivors outside the edges are
    counted in the outermost bins so that loss + total/N = 1 exactly."""
    x_edges = np.asarray(x_edges, dtype=float)
    y_edges = np.asarray(y_edges, dtype=float)
    xs = state.X[state.alive]
    ys = state.sigma[state.alive]
    ix = np.clip(np.searchsorted(x_edges, xs, side="right") - 1, 0, x_edges.size - 2)
    iy = np.clip(np.searchsorted(y_edges, ys, side="right") - 1, 0, y_edges.size - 2)
    counts = np.zeros((x_edges.size - 1, y_edges.size - 1), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    n_dead = state.n - xs.size
    return EmpiricalSnapshot(state.t, n_dead / state.n, x_edges, y_edges, counts, state.n)


@dataclass
class PortfolioPath:
    """Recorded states plus the loss at every simulation step."""

    states: list
    loss_times: np.ndarray
    loss: np.ndarray
    noise: CommonNoisePath
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def _coefficient_arrays(params, n: int) -> dict:
    if isinstance(params, CoefficientVector):
        params = [params]
    params = list(params)
    if len(params) not in (1, n):
        raise ValueError(f"need one coefficient vector or {n}, got {len(params)}")
    out = {}
    for name in ("k", "theta", "xi", "r", "rho1", "rho2"):
        vals = np.array([getattr(p, name) for p in params], dtype=float)
        out[name] = vals[0] if vals.size == 1 else vals
    return out


def _initial_arrays(init, n: Optional[int] = None):
    if isinstance(init, tuple) and len(init) == 2 and np.ndim(init[0]) == 1:
        x0 = np.asarray(init[0], dtype=float).copy()
        s0 = np.asarray(init[1], dtype=float).copy()
    else:
        arr = np.asarray(init, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("init must be (x0, sigma0) arrays or a list of (x, sigma) pairs")
        x0, s0 = arr[:, 0].copy(), arr[:, 1].copy()
    if x0.shape != s0.shape:
        raise ValueError("x0 and sigma0 must have the same length")
    if np.any(x0 < 0):
        raise ValueError("initial distances to default must be ≥ 0")
    return x0, s0


def iter_portfolio(params, spec: VolSpec, init, noise: CommonNoisePath, seed: int, *,
                   bridge: bool = False, zero_idiosyncratic: bool = False,
                   n_steps: Optional[int] = None) -> Iterator[PortfolioState]:
    """Yield the portfolio state at t = 0, dt, 2dt, ...

    The yielded arrays are reused between steps; copy them to keep a snapshot.
    ``bridge`` adds a Brownian-bridge crossing test on each step for particles
    that are positive at both ends. ``zero_idiosyncratic`` replaces the
    per-asset increments by zeros (deterministic-skeleton testing).
    """
    X, sigma = _initial_arrays(init)
    n = X.size
    co = _coefficient_arrays(params, n)
    dt = noise.dt
    sq_dt = math.sqrt(dt)
    total = noise.n_steps if n_steps is None else min(n_steps, noise.n_steps)

    alive = X > 0
    X[~alive] = 0.0
    default_time = np.where(alive, np.inf, 0.0)
    w_idio = np.sqrt(1.0 - co["rho1"] ** 2)
    b_idio = np.sqrt(1.0 - co["rho2"] ** 2)

    blocks = [(start, min(start + BLOCK_SIZE, n)) for start in range(0, n, BLOCK_SIZE)]
    gens = [_stream(seed, 1, j) for j in range(len(blocks))]

    state = PortfolioState(X, sigma, alive, default_time, 0.0, 0)
    yield state
    for step in range(total):
        if zero_idiosyncratic:
            z = np.zeros((2, n))
            u = np.ones(n)
        else:
            z = np.concatenate([g.standard_normal((2, b - a)) for g, (a, b) in zip(gens, blocks)],
                               axis=1)
            u = (np.concatenate([g.random(b - a) for g, (a, b) in zip(gens, blocks)])
                 if bridge else None)
        dw0 = noise.increments_W0[step]
        db0 = noise.increments_B0[step]
        hv = spec.h(sigma)
        qv = spec.q(sigma)
        dX = ((co["r"] - 0.5 * hv * hv) * dt
              + hv * (w_idio * sq_dt * z[0] + co["rho1"] * dw0))
        dS = (co["k"] * (co["theta"] - sigma) * dt
              + co["xi"] * qv * (b_idio * sq_dt * z[1] + co["rho2"] * db0))
        X_new = X + dX
        sigma += dS
        t_new = (step + 1) * dt
        hit = alive & (X_new <= 0)
        if bridge:
            both = alive & ~hit
            var = hv * hv * dt
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                p_cross = np.where(var > 0, np.exp(-2.0 * X * X_new / var), 0.0)
            hit |= both & (u < p_cross)
        X[:] = np.where(alive, X_new, 0.0)
        X[hit] = 0.0
        alive &= ~hit
        default_time[hit] = t_new
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(sigma))):
            bad = int(np.argmax(~(np.isfinite(X) & np.isfinite(sigma))))
            raise NumericDivergenceError(f"non-finite state for particle {bad} at step {step + 1}")
        state.t = t_new
        state.step = step + 1
        yield state


def _copy_state(s: PortfolioState) -> PortfolioState:
    return PortfolioState(s.X.copy(), s.sigma.copy(), s.alive.copy(), s.default_time.copy(),
                          s.t, s.step)


def simulate_portfolio(params, spec: VolSpec, init, noise: CommonNoisePath, seed: int, *,
                       record_every: Optional[int] = None, bridge: bool = False,
                       zero_idiosyncratic: bool = False,
                       n_steps: Optional[int] = None) -> PortfolioPath:
    """Run the particle system and record states every ``record_every`` steps
    (default: only the initial and final states); the loss is kept at every step."""
    total = noise.n_steps if n_steps is None else min(n_steps, noise.n_steps)
    states, losses = [], []
    for state in iter_portfolio(params, spec, init, noise, seed, bridge=bridge,
                                zero_idiosyncratic=zero_idiosyncratic, n_steps=total):
        losses.append(state.loss)
        if state.step == 0 or state.step == total or (
                record_every and state.step % record_every == 0):
            states.append(_copy_state(state))
    return PortfolioPath(states, noise.dt * np.arange(total + 1), np.array(losses), noise,
                         meta={"seed": seed, "bridge": bridge})


def loss_process(states: Union[PortfolioPath, Sequence[PortfolioState]]) -> np.ndarray:
    """Fraction of defaulted assets at each recorded state."""
    if isinstance(states, PortfolioPath):
        return states.loss.copy()
    states = list(states)
    if not states:
        raise ValueError("states must be non-empty")
    return np.array([s.loss for s in states])


# -- volatility-only simulation ----------------------------------------------

def simulate_volatility(c: CoefficientVector, spec: VolSpec, sigma0, n_paths: int, seed: int, *,
                        noise: Optional[CommonNoisePath] = None, dt: Optional[float] = None,
                        n_steps: Optional[int] = None, record: bool = True,
                        chunk: int = 20000):
    """Euler paths of dσ = k(θ−σ)dt + ξq(σ)(√(1−ρ₂²)dB¹ + ρ₂dB⁰).

    With ``noise`` the systemic path is frozen (conditional law given B⁰);
    without it each path draws its own B⁰, i.e. the unconditional law.
    Returns the (n_paths, n_steps+1) path array if ``record``, otherwise a
    pair (final values, running sup of |σ|).
    """
    if noise is not None:
        dt = noise.dt
        total = noise.n_steps if n_steps is None else n_steps
    else:
        if dt is None or n_steps is None:
            raise ValueError("dt and n_steps are required without a noise path")
        total = n_steps
    sq = math.sqrt(dt)
    b_idio = math.sqrt(1.0 - c.rho2 ** 2)
    finals, sups, paths = [], [], []
    for j, start in enumerate(range(0, n_paths, chunk)):
        m = min(chunk, n_paths - start)
        rng = _stream(seed, 2, j)
        s = np.broadcast_to(np.asarray(sigma0, dtype=float), (n_paths,))[start:start + m].copy()
        sup = np.abs(s)
        rec = np.empty((m, total + 1)) if record else None
        if record:
            rec[:, 0] = s
        for step in range(total):
            if noise is not None:
                z1 = rng.standard_normal(m)
                drive = b_idio * sq * z1 + c.rho2 * noise.increments_B0[step]
            else:
                drive = sq * rng.standard_normal(m)
            s += c.k * (c.theta - s) * dt + c.xi * spec.q(s) * drive
            np.maximum(sup, np.abs(s), out=sup)
            if record:
                rec[:, step + 1] = s
        if not np.all(np.isfinite(s)):
            raise NumericDivergenceError("volatility path diverged")
        finals.append(s)
        sups.append(sup)
        if record:
            paths.append(rec)
    if record:
        return np.concatenate(paths, axis=0)
    return np.concatenate(finals), np.concatenate(sups)


@dataclass(frozen=True)
class VolDensity:
    y: np.ndarray
    density: np.ndarray
    bandwidth: float
    sample_mean: float
    sample_var: float
    n_samples: int
    t: float

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.y))


def silverman_bandwidth(samples: np.ndarray) -> float:
    sd = float(np.std(samples, ddof=1))
    iqr = float(np.subtract(*np.percentile(samples, [75, 25])))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * samples.size ** (-0.2)


def gaussian_kde(samples: np.ndarray, bandwidth: float, grid: np.ndarray,
                 chunk: int = 4096) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    out = np.zeros(grid.size)
    norm = 1.0 / (samples.size * bandwidth * math.sqrt(2.0 * math.pi))
    for start in range(0, samples.size, chunk):
        d = (grid[:, None] - samples[None, start:start + chunk]) / bandwidth
        out += np.exp(-0.5 * d * d).sum(axis=1)
    return out * norm


def conditional_vol_density(c: CoefficientVector, spec: VolSpec, sigma0: float,
                            noise: CommonNoisePath, t: float, n_inner: int,
                            bandwidth: Optional[float] = None, seed: int = 0,
                            grid_points_per_bw: int = 4) -> VolDensity:
    """Kernel estimate of the density of σ_t given the frozen B⁰ path.

    ``bandwidth=None`` picks Silverman's rule. The estimate is evaluated on a
    grid spanning the samples ± 10 bandwidths with at least
    ``grid_points_per_bw`` points per bandwidth, so the trapezoid mass is 1 to
    well below 1e-6.
    """
    if bandwidth is not None and bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if n_inner < 1000:
        raise ValueError("n_inner must be at least 1000")
    steps = int(round(t / noise.dt))
    if steps < 1 or abs(steps * noise.dt - t) > 1e-9 * max(1.0, t) or steps > noise.n_steps:
        raise ValueError(f"t = {t} is not on the noise grid")
    final, _ = simulate_volatility(c, spec, sigma0, n_inner, seed, noise=noise, n_steps=steps,
                                   record=False)
    bw = silverman_bandwidth(final) if bandwidth is None else float(bandwidth)
    lo, hi = final.min() - 10 * bw, final.max() + 10 * bw
    n_grid = int(math.ceil((hi - lo) / bw * grid_points_per_bw)) + 1
    grid = np.linspace(lo, hi, n_grid)
    dens = gaussian_kde(final, bw, grid)
    return VolDensity(grid, dens, bw, float(final.mean()), float(final.var(ddof=1)),
                      final.size, steps * noise.dt)
