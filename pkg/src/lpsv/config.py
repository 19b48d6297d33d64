"""Scenario configuration: a YAML file parsed into validated dataclasses.

Unknown keys anywhere are errors. See ``docs/config.md`` for the schema.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .initial import ProductInitial
from .model import (H_PRESETS, Q_PRESETS, CoefficientVector, ValidationError, VolSpec,
                    check_correlation_condition, make_volspec)

TASKS = ("simulate", "solve", "compare", "vol-density", "smooth-study", "energy-residual")
STOCHASTIC = {"simulate", "solve", "compare", "vol-density", "energy-residual"}
# tasks pulled in by others
REQUIRES = {"compare": ("simulate", "solve"), "energy-residual": ("solve",)}

_TOP = {"name", "seed", "time", "model", "mixture", "vol", "initial", "particles", "solver",
        "vol_density", "smooth_study", "energy", "compare", "tasks", "output"}
_MODEL = {"k", "theta", "xi", "r", "rho1", "rho2", "rho3", "rho"}


def _check_keys(section: str, data, allowed) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{section} is a mapping", f"got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError("no unknown keys", f"{section}: unknown key(s) {unknown}")
    return dict(data)


def _number(section: str, key: str, value, *, positive=False, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{section}.{key} is a number", f"got {value!r}")
    if integer and int(value) != value:
        raise ValidationError(f"{section}.{key} is an integer", f"got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{section}.{key} finite", f"got {value!r}")
    if positive and value <= 0:
        raise ValidationError(f"{section}.{key} > 0", f"got {value!r}")
    return int(value) if integer else float(value)


@dataclass(frozen=True)
class ParticleSettings:
    n: int = 10000
    bridge: bool = False
    dt_multiple: int = 1
    record_every: int = 100
    hist_x: tuple = (0.0, 4.0, 40)
    hist_y: tuple = (-1.0, 1.0, 40)


@dataclass(frozen=True)
class SolverSettings:
    dx: float = 0.02
    dy: float = 0.04
    dt_multiple: int = 1
    X_max: Optional[float] = None
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    scheme: str = "lie-splitting"
    cfl_safety: float = 0.9
    record_every: int = 0


@dataclass(frozen=True)
class VolDensitySettings:
    sigma0: float = 0.2
    t: float = 1.0
    n_inner: int = 100000
    bandwidth: Optional[float] = None


@dataclass(frozen=True)
class SmoothStudySettings:
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    z_min: float = -4.0
    z_max: float = 4.0
    nz: int = 4001
    bump_sd: float = 0.5


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: Optional[int]
    horizon: float
    dt: float
    components: tuple  # ((weight, CoefficientVector), ...)
    vol: VolSpec
    vol_config: dict
    initial: ProductInitial
    particles: ParticleSettings
    solver: SolverSettings
    vol_density: VolDensitySettings
    smooth_study: SmoothStudySettings
    energy_epsilon: float
    compare_tolerance: float
    tasks: tuple
    output: Optional[str]
    raw: dict = field(compare=False, default_factory=dict)
    text_hash: str = ""

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def weights(self):
        return tuple(w for w, _ in self.components)

    @property
    def coefficients(self):
        return tuple(c for _, c in self.components)

    def with_seed(self, seed: int) -> "Scenario":
        from dataclasses import replace
        return replace(self, seed=int(seed))


def _coefficients(section: str, data) -> CoefficientVector:
    d = _check_keys(section, data, _MODEL)
    for key in ("k", "theta", "xi", "r"):
        if key not in d:
            raise ValidationError(f"{section}.{key} present", "missing")
    vals = {k: _number(section, k, v, allow_none=(k == "rho")) for k, v in d.items()}
    return CoefficientVector(**vals)


def _pair(section, key, value, n=3):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ValidationError(f"{section}.{key} is [min, max, bins]", f"got {value!r}")
    lo, hi = _number(section, key, value[0]), _number(section, key, value[1])
    bins = _number(section, key, value[2], positive=True, integer=True)
    if hi <= lo:
        raise ValidationError(f"{section}.{key} max > min", f"got {value!r}")
    return (lo, hi, bins)


def parse_scenario(data: dict, text_hash: str = "") -> Scenario:
    top = _check_keys("config", data, _TOP)

    tasks = top.get("tasks", ["simulate"])
    if not isinstance(tasks, list) or not tasks:
        raise ValidationError("tasks is a non-empty list", f"got {tasks!r}")
    for t in tasks:
        if t not in TASKS:
            raise ValidationError("task known", f"{t!r} not in {list(TASKS)}")
    expanded = []
    for t in TASKS:  # dependency order
        if t in tasks or any(t in REQUIRES.get(s, ()) for s in tasks):
            expanded.append(t)

    seed = top.get("seed")
    if seed is not None:
        seed = _number("config", "seed", seed, integer=True)
        if seed < 0:
            raise ValidationError("seed ≥ 0", f"got {seed}")
    if seed is None and STOCHASTIC.intersection(expanded):
        raise ValidationError("seed present for stochastic tasks",
                              f"tasks {sorted(STOCHASTIC.intersection(expanded))} need a seed")

    tm = _check_keys("time", top.get("time"), {"horizon", "dt"})
    horizon = _number("time", "horizon", tm.get("horizon", 1.0), positive=True)
    dt = _number("time", "dt", tm.get("dt", 1e-3), positive=True)
    if abs(horizon / dt - round(horizon / dt)) > 1e-9 * horizon / dt:
        raise ValidationError("time.horizon is a multiple of time.dt",
                              f"{horizon!r} / {dt!r} is not an integer")

    if ("model" in top) == ("mixture" in top):
        raise ValidationError("exactly one of model / mixture", "give one of the two")
    if "model" in top:
        components = ((1.0, _coefficients("model", top["model"])),)
    else:
        mix = top["mixture"]
        if not isinstance(mix, list) or not mix:
            raise ValidationError("mixture is a non-empty list", f"got {mix!r}")
        comps = []
        for i, item in enumerate(mix):
            it = _check_keys(f"mixture[{i}]", item, {"weight", "model"})
            w = _number(f"mixture[{i}]", "weight", it.get("weight"), positive=True)
            comps.append((w, _coefficients(f"mixture[{i}].model", it.get("model"))))
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValidationError("weights sum to 1 ± 1e−12", f"sum is {total!r}")
        components = tuple(comps)

    vol_raw = _check_keys("vol", top.get("vol"), {"q", "h", "q_params", "h_params"})
    q_name = vol_raw.get("q", "constant")
    h_name = vol_raw.get("h", "constant")
    if q_name not in Q_PRESETS:
        raise ValidationError("vol.q preset known", f"{q_name!r} not in {sorted(Q_PRESETS)}")
    if h_name not in H_PRESETS:
        raise ValidationError("vol.h preset known", f"{h_name!r} not in {sorted(H_PRESETS)}")
    q_params = _check_keys("vol.q_params", vol_raw.get("q_params"),
                           {"value"} if q_name == "constant" else set())
    h_params = _check_keys("vol.h_params", vol_raw.get("h_params"),
                           {"value"} if h_name == "constant" else {"h_min", "h_max"})
    if h_name == "constant":
        h_params.setdefault("value", 0.3)
    else:
        h_params.setdefault("h_min", 0.1)
        h_params.setdefault("h_max", 0.6)
    q_params = {k: _number("vol.q_params", k, v, positive=True) for k, v in q_params.items()}
    h_params = {k: _number("vol.h_params", k, v, positive=True) for k, v in h_params.items()}
    vol = make_volspec(q_name, h_name, q_params=q_params, h_params=h_params)

    ini = _check_keys("initial", top.get("initial"), {"x_kind", "x_scale", "x0", "y_mean", "y_sd"})
    try:
        initial = ProductInitial(**{k: (v if k == "x_kind" else _number("initial", k, v))
                                    for k, v in ini.items()})
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError("initial condition valid", str(exc)) from exc

    pa = _check_keys("particles", top.get("particles"),
                     {"n", "bridge", "dt_multiple", "record_every", "hist_x", "hist_y"})
    particles = ParticleSettings(
        n=_number("particles", "n", pa.get("n", 10000), positive=True, integer=True),
        bridge=bool(pa.get("bridge", False)),
        dt_multiple=_number("particles", "dt_multiple", pa.get("dt_multiple", 1), positive=True,
                            integer=True),
        record_every=_number("particles", "record_every", pa.get("record_every", 100),
                             positive=True, integer=True),
        hist_x=_pair("particles", "hist_x", pa.get("hist_x", [0.0, 4.0, 40])),
        hist_y=_pair("particles", "hist_y", pa.get("hist_y", [-1.0, 1.0, 40])),
    )

    so = _check_keys("solver", top.get("solver"),
                     {"dx", "dy", "dt_multiple", "X_max", "y_min", "y_max", "scheme",
                      "cfl_safety", "record_every"})
    solver = SolverSettings(
        dx=_number("solver", "dx", so.get("dx", 0.02), positive=True),
        dy=_number("solver", "dy", so.get("dy", 0.04), positive=True),
        dt_multiple=_number("solver", "dt_multiple", so.get("dt_multiple", 1), positive=True,
                            integer=True),
        X_max=_number("solver", "X_max", so.get("X_max"), positive=True, allow_none=True),
        y_min=_number("solver", "y_min", so.get("y_min"), allow_none=True),
        y_max=_number("solver", "y_max", so.get("y_max"), allow_none=True),
        scheme=str(so.get("scheme", "lie-splitting")),
        cfl_safety=_number("solver", "cfl_safety", so.get("cfl_safety", 0.9), positive=True),
        record_every=_number("solver", "record_every", so.get("record_every", 0), integer=True),
    )

    vd = _check_keys("vol_density", top.get("vol_density"), {"sigma0", "t", "n_inner", "bandwidth"})
    vol_density = VolDensitySettings(
        sigma0=_number("vol_density", "sigma0", vd.get("sigma0", 0.2)),
        t=_number("vol_density", "t", vd.get("t", horizon), positive=True),
        n_inner=_number("vol_density", "n_inner", vd.get("n_inner", 100000), positive=True,
                        integer=True),
        bandwidth=_number("vol_density", "bandwidth", vd.get("bandwidth"), positive=True,
                          allow_none=True),
    )

    ss = _check_keys("smooth_study", top.get("smooth_study"),
                     {"epsilons", "z_min", "z_max", "nz", "bump_sd"})
    eps = ss.get("epsilons", [0.2, 0.1, 0.05, 0.025])
    if not isinstance(eps, list) or not eps:
        raise ValidationError("smooth_study.epsilons is a non-empty list", f"got {eps!r}")
    smooth_study = SmoothStudySettings(
        epsilons=tuple(_number("smooth_study", "epsilons", e, positive=True) for e in eps),
        z_min=_number("smooth_study", "z_min", ss.get("z_min", -4.0)),
        z_max=_number("smooth_study", "z_max", ss.get("z_max", 4.0)),
        nz=_number("smooth_study", "nz", ss.get("nz", 4001), positive=True, integer=True),
        bump_sd=_number("smooth_study", "bump_sd", ss.get("bump_sd", 0.5), positive=True),
    )
    e = smooth_study.epsilons
    if any(a <= b for a, b in zip(e, e[1:])):
        raise ValidationError("smooth_study.epsilons strictly decreasing", f"got {list(e)}")
    if smooth_study.z_max <= smooth_study.z_min:
        raise ValidationError("smooth_study.z_max > z_min",
                              f"got [{smooth_study.z_min}, {smooth_study.z_max}]")

    en = _check_keys("energy", top.get("energy"), {"epsilon"})
    cp = _check_keys("compare", top.get("compare"), {"tolerance"})
    out = _check_keys("output", top.get("output"), {"dir"})

    name = str(top.get("name", "scenario"))
    scenario = Scenario(
        name=name, seed=seed, horizon=horizon, dt=dt, components=components, vol=vol,
        vol_config={"q": q_name, "h": h_name, "q_params": q_params, "h_params": h_params},
        initial=initial, particles=particles, solver=solver, vol_density=vol_density,
        smooth_study=smooth_study,
        energy_epsilon=_number("energy", "epsilon", en.get("epsilon", 0.2), positive=True),
        compare_tolerance=_number("compare", "tolerance", cp.get("tolerance", 0.02),
                                  positive=True),
        tasks=tuple(expanded), output=out.get("dir"), raw=dict(data), text_hash=text_hash,
    )
    if "solve" in expanded:
        for _, c in components:
            if not check_correlation_condition(c):
                raise ValidationError(
                    "correlation condition",
                    f"|rho − xi·rho3·rho1·rho2| = {abs(c.rho - c.standard_rho)!r} exceeds "
                    "xi·√(1−rho1²)·√(1−rho2²); uniqueness of the SPDE solution is not "
                    "guaranteed, refusing to solve")
    return scenario


def load_scenario(path) -> Scenario:
    text = Path(path).read_bytes()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError("config parses as YAML", str(exc)) from exc
    if not isinstance(data, dict):
        raise ValidationError("config is a mapping", "top level must be a mapping")
    return parse_scenario(data, hashlib.sha256(text).hexdigest())
