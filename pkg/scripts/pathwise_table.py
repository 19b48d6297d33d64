"""Particle and SPDE loss curves on one shared common-noise path, over grid refinements."""
import argparse
import time
from dataclasses import replace

import numpy as np

from lpsv.initial import ProductInitial
from lpsv.model import CoefficientVector, make_volspec
from lpsv.particles import generate_common_noise, simulate_portfolio
from lpsv.spde import SolverConfig, cfl_dt, solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--noise-seed", type=int, default=11)
    ap.add_argument("--finest", type=float, default=0.01, help="smallest dx to try")
    args = ap.parse_args()

    c = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05, rho1=0.3, rho2=0.2, rho3=0.5)
    spec = make_volspec("constant", "clamped_abs", h_params={"h_min": 0.1, "h_max": 0.6})
    u0 = ProductInitial("rayleigh", x_scale=0.7, y_mean=0.2, y_sd=0.1)
    x, y = u0.sample(args.n, np.random.default_rng(5))
    print("dx,dy,dt,spde_loss_T,particle_loss_T,sup_gap,min_over_max,seconds")
    dx = 0.04
    while dx >= args.finest * (1 - 1e-9):
        base = SolverConfig(dx=dx, dy=2 * dx, dt=1.0, X_max=5.0, y_min=-2.2, y_max=2.6)
        cfg = replace(base, dt=cfl_dt(base, c, spec, 1.0))
        noise = generate_common_noise(cfg.dt, round(1.0 / cfg.dt), c.rho3, args.noise_seed)
        t0 = time.perf_counter()
        res = solve(cfg, c, spec, u0, noise)
        path = simulate_portfolio(c, spec, (x, y), noise, 3)
        gap = np.abs(path.loss - res.loss).max()
        print(f"{dx},{2 * dx},{cfg.dt:.3e},{res.loss[-1]:.5f},{path.loss[-1]:.5f},{gap:.5f},"
              f"{res.min_ratio:.2e},{time.perf_counter() - t0:.1f}")
        dx /= 2


if __name__ == "__main__":
    main()
