"""Model parameters, vol-of-vol / volatility-mapping specs and their validity checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]


class ValidationError(ValueError):
    """Raised when parameters violate a documented invariant."""

    def __init__(self, invariant: str, message: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {message}" if message else invariant)


class EvaluationError(ValueError):
    """Raised when a user-supplied function returns a non-finite value."""


@dataclass(frozen=True)
class CoefficientVector:
    """Per-asset coefficients plus the systemic correlation and the SPDE cross coefficient.

    ``rho`` defaults to ``xi * rho3 * rho1 * rho2``, which is its value for a
    portfolio with independent idiosyncratic noises.
    """

    k: float
    theta: float
    xi: float
    r: float
    rho1: float = 0.0
    rho2: float = 0.0
    rho3: float = 0.0
    rho: Optional[float] = None

    def __post_init__(self):
        for name in ("k", "theta", "xi", "r", "rho1", "rho2", "rho3"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} finite", f"got {getattr(self, name)!r}")
        if not -1.0 < self.rho1 < 1.0:
            raise ValidationError("rho1 ∈ (−1,1)", f"got {self.rho1}")
        if not -1.0 < self.rho2 < 1.0:
            raise ValidationError("rho2 ∈ (−1,1)", f"got {self.rho2}")
        if not -1.0 <= self.rho3 <= 1.0:
            raise ValidationError("rho3 ∈ [−1,1]", f"got {self.rho3}")
        # k = 0 and xi = 0 are admitted: the deterministic-skeleton scenarios need them.
        if self.k < 0:
            raise ValidationError("k ≥ 0", f"got {self.k}")
        if self.xi < 0:
            raise ValidationError("xi ≥ 0", f"got {self.xi}")
        if self.rho is None:
            object.__setattr__(self, "rho", self.standard_rho)
        elif not math.isfinite(self.rho):
            raise ValidationError("rho finite", f"got {self.rho!r}")

    @property
    def standard_rho(self) -> float:
        return self.xi * self.rho3 * self.rho1 * self.rho2

    def replace(self, **changes) -> "CoefficientVector":
        values = {f: getattr(self, f) for f in
                  ("k", "theta", "xi", "r", "rho1", "rho2", "rho3", "rho")}
        if "rho" not in changes and any(
                key in changes for key in ("xi", "rho1", "rho2", "rho3")):
            # keep rho tied to the standard value if it was never overridden
            if values["rho"] == self.standard_rho:
                values["rho"] = None
        values.update(changes)
        return CoefficientVector(**values)

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in
                ("k", "theta", "xi", "r", "rho1", "rho2", "rho3", "rho")}


@dataclass(frozen=True)
class VolSpec:
    """Vol-of-vol function ``q`` (with three derivatives) and volatility map ``h``.

    All callables must accept and return numpy arrays (elementwise).
    ``q_const`` is set for constant ``q`` so callers can take closed-form routes.
    """

    q: ArrayFn
    dq: ArrayFn
    d2q: ArrayFn
    d3q: ArrayFn
    h: ArrayFn
    q_min: float
    q_max: float
    h_min: float
    h_max: float
    decay_constant: float
    q_name: str = "custom"
    h_name: str = "custom"
    q_const: Optional[float] = None
    h_const: Optional[float] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 < self.q_min <= self.q_max < math.inf:
            raise ValidationError("0 < m_q ≤ M_q < ∞", f"got [{self.q_min}, {self.q_max}]")
        if not 0 <= self.h_min <= self.h_max < math.inf:
            raise ValidationError("0 ≤ h_min ≤ h_max < ∞", f"got [{self.h_min}, {self.h_max}]")


def _const(value: float) -> ArrayFn:
    return lambda z: np.full(np.shape(z), float(value))


def constant_q(value: float = 1.0) -> dict:
    """q ≡ value: the Ornstein-Uhlenbeck case."""
    return dict(q=_const(value), dq=_const(0.0), d2q=_const(0.0), d3q=_const(0.0),
                q_min=value, q_max=value, decay_constant=0.0, q_name="constant",
                q_const=float(value))


def rational_q() -> dict:
    """q(z) = 2 + 1/(1+z²); our own non-constant preset meeting the decay bounds."""

    def q(z):
        z = np.asarray(z, dtype=float)
        return 2.0 + 1.0 / (1.0 + z * z)

    def dq(z):
        z = np.asarray(z, dtype=float)
        return -2.0 * z / (1.0 + z * z) ** 2

    def d2q(z):
        z = np.asarray(z, dtype=float)
        return (6.0 * z * z - 2.0) / (1.0 + z * z) ** 3

    def d3q(z):
        z = np.asarray(z, dtype=float)
        return 24.0 * z * (1.0 - z * z) / (1.0 + z * z) ** 4

    # sup_z |q^(n)(z)|(1+|z|) ≈ 6.2852, attained by the third derivative near |z| = 0.368
    return dict(q=q, dq=dq, d2q=d2q, d3q=d3q, q_min=2.0, q_max=3.0,
                decay_constant=6.3, q_name="rational", q_const=None)


def constant_h(value: float) -> dict:
    return dict(h=_const(value), h_min=value, h_max=value, h_name="constant",
                h_const=float(value))


def clamped_abs_h(h_min: float, h_max: float) -> dict:
    """h(y) = clamp(|y|, h_min, h_max)."""
    if not 0 < h_min <= h_max:
        raise ValidationError("0 < h_min ≤ h_max", f"got [{h_min}, {h_max}]")

    def h(y):
        return np.clip(np.abs(np.asarray(y, dtype=float)), h_min, h_max)

    return dict(h=h, h_min=h_min, h_max=h_max, h_name="clamped_abs", h_const=None)


Q_PRESETS = {"constant": constant_q, "rational": rational_q}
H_PRESETS = {"constant": constant_h, "clamped_abs": clamped_abs_h}


def make_volspec(q: str = "constant", h: str = "constant", *,
                 q_params: Optional[dict] = None, h_params: Optional[dict] = None) -> VolSpec:
    """Build a VolSpec from preset names, e.g. ``make_volspec("rational", "clamped_abs",
    h_params={"h_min": 0.1, "h_max": 0.6})``."""
    q_params = dict(q_params or {})
    h_params = dict(h_params or {})
    if q not in Q_PRESETS:
        raise ValidationError("q preset known", f"{q!r} not in {sorted(Q_PRESETS)}")
    if h not in H_PRESETS:
        raise ValidationError("h preset known", f"{h!r} not in {sorted(H_PRESETS)}")
    parts = {}
    parts.update(Q_PRESETS[q](**q_params))
    parts.update(H_PRESETS[h](**h_params))
    return VolSpec(**parts, params={"q": q, "h": h, "q_params": q_params,
                                    "h_params": h_params})


def ou_spec(h_value: float = 0.3, q_value: float = 1.0) -> VolSpec:
    return make_volspec("constant", "constant", q_params={"value": q_value},
                        h_params={"value": h_value})


@dataclass(frozen=True)
class Violation:
    point: float
    quantity: str
    observed: float
    bound: float


@dataclass(frozen=True)
class Assumption1Report:
    violations: tuple = ()

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0


def validate_assumption1(spec: VolSpec, probe_grid: Sequence[float]) -> Assumption1Report:
    """Spot-check the declared bounds of ``q`` (and ``h``) on the probe points.

    Checks ``m_q ≤ q ≤ M_q``, ``|q^(n)(x)|·(1+|x|) ≤ c_d`` for n = 1, 2, 3 and
    ``h_min ≤ h ≤ h_max``; every failing (point, quantity) pair is reported.
    """
    grid = np.asarray(probe_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("probe_grid must be non-empty")
    if not np.all(np.isfinite(grid)):
        raise ValueError("probe_grid must contain finite values")

    evaluations = {
        "q": spec.q(grid), "q'": spec.dq(grid), "q''": spec.d2q(grid),
        "q'''": spec.d3q(grid), "h": spec.h(grid),
    }
    for name, values in evaluations.items():
        values = np.broadcast_to(np.asarray(values, dtype=float), grid.shape)
        bad = ~np.isfinite(values)
        if bad.any():
            point = grid[np.argmax(bad)]
            raise EvaluationError(f"{name} is not finite at probe point {point!r}")
        evaluations[name] = values

    # relative slack so that declared bounds equal to attained extrema pass
    slack = 1e-12
    violations = []
    for i, x in enumerate(grid):
        qv = evaluations["q"][i]
        if qv < spec.q_min * (1 - slack):
            violations.append(Violation(float(x), "q ≥ m_q", float(qv), spec.q_min))
        if qv > spec.q_max * (1 + slack):
            violations.append(Violation(float(x), "q ≤ M_q", float(qv), spec.q_max))
        for name in ("q'", "q''", "q'''"):
            scaled = abs(evaluations[name][i]) * (1.0 + abs(x))
            if scaled > spec.decay_constant * (1 + slack) + slack:
                violations.append(Violation(float(x), f"|{name}|·(1+|x|) ≤ c_d",
                                            float(scaled), spec.decay_constant))
        hv = evaluations["h"][i]
        if hv < spec.h_min * (1 - slack):
            violations.append(Violation(float(x), "h ≥ h_min", float(hv), spec.h_min))
        if hv > spec.h_max * (1 + slack):
            violations.append(Violation(float(x), "h ≤ h_max", float(hv), spec.h_max))
    return Assumption1Report(tuple(violations))


def correlation_bound(c: CoefficientVector) -> float:
    return c.xi * math.sqrt(1.0 - c.rho1 ** 2) * math.sqrt(1.0 - c.rho2 ** 2)


CORRELATION_RTOL = 1e-12


def check_correlation_condition(c: CoefficientVector) -> bool:
    """|rho − xi·rho3·rho1·rho2| ≤ xi·√(1−rho1²)·√(1−rho2²).

    The bound is widened by ``CORRELATION_RTOL`` (relative) so that values
    sitting exactly on it, such as those from ``effective_rho`` with unit
    loadings, are not rejected because of rounding.
    """
    bound = correlation_bound(c)
    return abs(c.rho - c.standard_rho) <= bound + CORRELATION_RTOL * max(bound, 1e-300)


def effective_rho(c: CoefficientVector, w1: float, b1: float) -> float:
    """Cross coefficient when the idiosyncratic noises share a component.

    ``w1`` and ``b1`` are the loadings of W¹ and B¹ on their own independent
    parts; the construction breaks down when either loading is zero.
    """
    for name, value in (("w1", w1), ("b1", b1)):
        if not -1.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [-1, 1], got {value}")
        if value == 0.0:
            raise ValueError(f"{name} = 0 is outside the domain of effective_rho")
    return c.standard_rho + (c.xi * math.sqrt(1.0 - c.rho1 ** 2) * math.sqrt(1.0 - c.rho2 ** 2)
                             * math.sqrt(1.0 - w1 ** 2) * math.sqrt(1.0 - b1 ** 2))
