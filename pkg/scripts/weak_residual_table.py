"""Weak-form residual ensembles for the default test function at growing portfolio sizes."""
import argparse
import math
import time

import numpy as np

from lpsv.initial import ProductInitial
from lpsv.model import CoefficientVector, make_volspec
from lpsv.particles import generate_common_noise
from lpsv.verification import ensemble_stats, weak_form_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=32)
    ap.add_argument("--sizes", type=int, nargs="+", default=[2500, 10_000, 40_000])
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()

    c = CoefficientVector(k=1.0, theta=0.2, xi=0.4, r=0.05, rho1=0.3, rho2=0.2, rho3=0.5)
    spec = make_volspec("constant", "clamped_abs", h_params={"h_min": 0.1, "h_max": 0.6})
    u0 = ProductInitial("rayleigh", x_scale=0.7, y_mean=0.2, y_sd=0.1)
    steps = round(1.0 / args.dt)
    print("n,mean,se,mean_over_se,rms,rms_times_sqrt_n,seconds")
    for n in args.sizes:
        t0 = time.perf_counter()
        r = []
        for s in range(args.seeds):
            noise = generate_common_noise(args.dt, steps, c.rho3, 100 + s)
            x, y = u0.sample(n, np.random.default_rng(1000 + s))
            r.append(weak_form_run(c, spec, (x, y), noise, 2000 + s))
        mean, se = ensemble_stats(r)
        rms = float(np.sqrt(np.mean(np.square(r))))
        print(f"{n},{mean:.3e},{se:.3e},{mean / se:.2f},{rms:.3e},{rms * math.sqrt(n):.3f},"
              f"{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
