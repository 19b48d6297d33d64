"""Loss at t=1 in the constant-coefficient scenario against the first-passage oracle.

Particles are run with and without the bridge correction over several step
sizes; the solver is run over several x spacings.
"""
import argparse
import time
import warnings
from dataclasses import replace

import numpy as np

from lpsv.initial import ProductInitial
from lpsv.model import CoefficientVector, ou_spec
from lpsv.particles import CommonNoisePath, simulate_portfolio
from lpsv.spde import SolverConfig, cfl_dt, solve
from lpsv.verification import first_passage_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    c = CoefficientVector(k=0.0, theta=0.3, xi=0.0, r=0.05)
    spec = ou_spec(0.3)
    ref = first_passage_oracle(0.5, c.r - 0.045, 0.3, 1.0)
    print(f"oracle {ref:.5f}")
    print("method,step,loss,error,seconds")
    for dt in (1e-2, 3e-3, 1e-3):
        n_steps = round(1.0 / dt)
        for bridge in (False, True):
            t0 = time.perf_counter()
            path = simulate_portfolio(c, spec, (np.full(args.n, 0.5), np.full(args.n, 0.3)),
                                      CommonNoisePath.zero(dt, n_steps), args.seed, bridge=bridge)
            name = "particles+bridge" if bridge else "particles"
            print(f"{name},{dt},{path.loss[-1]:.5f},{path.loss[-1] - ref:+.5f},"
                  f"{time.perf_counter() - t0:.1f}")
    for dx in (1e-2, 5e-3, 2.5e-3):
        base = SolverConfig(dx=dx, dy=0.05, dt=1.0, X_max=3.0, y_min=0.2, y_max=0.4)
        cfg = replace(base, dt=cfl_dt(base, c, spec, 1.0))
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = solve(cfg, c, spec, ProductInitial("point", x0=0.5, y_mean=0.3, y_sd=0.0),
                        CommonNoisePath.zero(cfg.dt, round(1.0 / cfg.dt)))
        print(f"spde,{dx},{res.loss[-1]:.5f},{res.loss[-1] - ref:+.5f},"
              f"{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
