"""Initial-condition presets usable by both the particle simulator and the SPDE solver."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProductInitial:
    """u0(x, y) = f(x)·N(y; y_mean, y_sd²) with f a Rayleigh law of scale ``x_scale``
    (density x/s²·exp(−x²/2s²), vanishing at x = 0) or a point mass at ``x0``.

    ``y_sd = 0`` puts every particle at ``y_mean``.
    """

    x_kind: str = "rayleigh"
    x_scale: float = 0.7
    x0: float = 0.5
    y_mean: float = 0.2
    y_sd: float = 0.1

    def __post_init__(self):
        if self.x_kind not in ("rayleigh", "point"):
            raise ValueError(f"unknown x_kind {self.x_kind!r}")
        if self.x_kind == "rayleigh" and self.x_scale <= 0:
            raise ValueError("x_scale must be positive")
        if self.x_kind == "point" and self.x0 <= 0:
            raise ValueError("x0 must be positive")
        if self.y_sd < 0:
            raise ValueError("y_sd must be ≥ 0")

    def x_density(self, x):
        x = np.asarray(x, dtype=float)
        s2 = self.x_scale ** 2
        return np.where(x > 0, x / s2 * np.exp(-0.5 * x * x / s2), 0.0)

    def y_density(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-0.5 * ((y - self.y_mean) / self.y_sd) ** 2) / (
            self.y_sd * math.sqrt(2 * math.pi))

    def density(self, X, Y):
        """Pointwise density; only defined for the smooth (rayleigh, y_sd > 0) case."""
        if self.x_kind != "rayleigh" or self.y_sd == 0:
            raise ValueError("point masses have no pointwise density; use a grid projection")
        return self.x_density(X) * self.y_density(Y)

    def sample(self, n: int, rng: np.random.Generator):
        if self.x_kind == "rayleigh":
            x = rng.rayleigh(self.x_scale, n)
        else:
            x = np.full(n, self.x0)
        y = self.y_mean + self.y_sd * rng.standard_normal(n) if self.y_sd > 0 else np.full(
            n, self.y_mean)
        return x, y
