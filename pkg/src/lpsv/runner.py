"""Execute the tasks of a Scenario and collect artifacts for ``io.emit_outputs``."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import Scenario
from .io import JsonDoc, JsonLines, GridDump, Results, Table
from .lamperti import LampertiMap
from .model import ValidationError
from .particles import (_stream, empirical_snapshot, generate_common_noise, simulate_portfolio,
                        conditional_vol_density)
from .smoothing import TransformedKernel, convergence_study, energy_identity, preset_profiles
from .spde import (ConfigurationError, SolverConfig, default_box, mixture_loss, solve,
                   stability_bound)
from .verification import (compare_loss_curves, l1_to_gaussian, ou_conditional_density_oracle,
                           ComparisonReport)

# spawn keys of the independent streams derived from the scenario seed
STREAMS = {"common_noise": [0], "particles": [1, "block"], "volatility": [2, "chunk"],
           "initial": [3]}


def component_counts(weights, n: int):
    """Deterministic largest-remainder split of n particles by mixture weight."""
    raw = np.asarray(weights, dtype=float) * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


def _x_mean(sc: Scenario) -> float:
    ini = sc.initial
    return ini.x_scale * math.sqrt(math.pi / 2) if ini.x_kind == "rayleigh" else ini.x0


def solver_config(sc: Scenario, c) -> SolverConfig:
    s = sc.solver
    X_max, y_min, y_max = default_box(c, sc.vol, _x_mean(sc), sc.horizon)
    cfg = SolverConfig(dx=s.dx, dy=s.dy, dt=sc.dt * s.dt_multiple,
                       X_max=s.X_max if s.X_max is not None else X_max,
                       y_min=s.y_min if s.y_min is not None else y_min,
                       y_max=s.y_max if s.y_max is not None else y_max,
                       scheme=s.scheme, cfl_safety=s.cfl_safety)
    bound = cfg.cfl_safety * stability_bound(cfg, c, sc.vol)
    if cfg.dt > bound:
        raise ConfigurationError(
            f"solver step {cfg.dt!r} exceeds the CFL bound {bound!r}; lower time.dt or "
            "solver.dt_multiple, or coarsen the grid")
    return cfg


def preflight(sc: Scenario) -> dict:
    """Checks that need no simulation: solver configs and CFL, kernel resolution."""
    info = {"tasks": list(sc.tasks)}
    rho3 = {c.rho3 for c in sc.coefficients}
    if len(rho3) > 1:
        raise ValidationError("common rho3 across mixture", f"got {sorted(rho3)}")
    if sc.particles.dt_multiple > sc.n_steps or sc.n_steps % sc.particles.dt_multiple:
        raise ValidationError("particles.dt_multiple divides the step count",
                              f"{sc.n_steps} steps, multiple {sc.particles.dt_multiple}")
    if "solve" in sc.tasks:
        if sc.n_steps % sc.solver.dt_multiple:
            raise ValidationError("solver.dt_multiple divides the step count",
                                  f"{sc.n_steps} steps, multiple {sc.solver.dt_multiple}")
        cfgs = [solver_config(sc, c) for c in sc.coefficients]
        info["solver_dt"] = cfgs[0].dt
        if "energy-residual" in sc.tasks:
            m = LampertiMap(sc.vol, sc.coefficients[0])
            TransformedKernel(sc.energy_epsilon, m).check_resolution(cfgs[0].y_nodes)
    if "vol-density" in sc.tasks:
        vd = sc.vol_density
        if abs(vd.t / sc.dt - round(vd.t / sc.dt)) > 1e-9 or vd.t > sc.horizon + 1e-12:
            raise ValidationError("vol_density.t on the noise grid", f"got {vd.t!r}")
        if vd.n_inner < 1000:
            raise ValidationError("vol_density.n_inner ≥ 1000", f"got {vd.n_inner}")
    return info


def run_scenario(sc: Scenario, threads: int = 1) -> Results:
    preflight(sc)
    results = Results()
    seed = sc.seed
    results.manifest = {"scenario": sc.name, "config_sha256": sc.text_hash, "seed": seed,
                        "streams": STREAMS, "tasks": list(sc.tasks), "threads": threads}
    noise = generate_common_noise(sc.dt, sc.n_steps, sc.coefficients[0].rho3, seed) \
        if seed is not None else None
    state = {}

    if "simulate" in sc.tasks:
        pset = sc.particles
        x, y = sc.initial.sample(pset.n, _stream(seed, 3))
        counts = component_counts(sc.weights, pset.n)
        params = [c for c, k in zip(sc.coefficients, counts) for _ in range(k)]
        pnoise = noise.coarsen(pset.dt_multiple)
        path = simulate_portfolio(params, sc.vol, (x, y), pnoise, seed,
                                  record_every=pset.record_every, bridge=pset.bridge)
        state["particle_loss"] = (path.loss_times, path.loss)
        results.add("loss.csv", Table(("t", "loss"), zip(path.loss_times, path.loss)))
        xe = np.linspace(*pset.hist_x[:2], pset.hist_x[2] + 1)
        ye = np.linspace(*pset.hist_y[:2], pset.hist_y[2] + 1)
        rows = []
        for st in path.states:
            snap = empirical_snapshot(st, xe, ye)
            for i in range(snap.counts.shape[0]):
                for j in range(snap.counts.shape[1]):
                    if snap.counts[i, j]:
                        rows.append((snap.t, snap.loss, i, j, int(snap.counts[i, j])))
        results.add("snapshots.csv", Table(("t", "loss", "bin_x", "bin_y", "count"), rows))

    if "solve" in sc.tasks:
        record = sc.solver.record_every
        if "energy-residual" in sc.tasks and record == 0:
            record = max(1, sc.n_steps // sc.solver.dt_multiple // 200)

        def one(c):
            return solve(solver_config(sc, c), c, sc.vol, sc.initial, noise,
                         record_every=record or None)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            solved = list(pool.map(one, sc.coefficients))
        loss = mixture_loss(solved, sc.weights)
        times = solved[0].times
        state["spde_loss"] = (times, loss)
        state["solved"] = solved
        results.add("loss_spde.csv", Table(("t", "loss"), zip(times, loss)))
        for i, s in enumerate(solved):
            results.add(f"grid_final_{i}.lpsv", GridDump(s.snapshots[-1], with_csv=True))
        results.add("spde_diagnostics.jsonl", JsonLines(
            [{"component": i, "min_over_max": s.min_ratio, "final_mass": float(s.mass[-1])}
             for i, s in enumerate(solved)]))

    if "compare" in sc.tasks:
        tp, lp = state["particle_loss"]
        ts, ls = state["spde_loss"]
        mp, ms = sc.particles.dt_multiple, sc.solver.dt_multiple
        common = mp * ms // math.gcd(mp, ms)
        a = lp[:: common // mp]
        b = ls[:: common // ms]
        report = compare_loss_curves(a, b, sc.compare_tolerance, sc.name)
        results.add("compare.jsonl", JsonLines([report.to_dict()]))
        results.add("compare_curves.csv", Table(("t", "loss_particles", "loss_spde"),
                                                zip(tp[:: common // mp], a, b)))

    if "vol-density" in sc.tasks:
        vd = sc.vol_density
        c = sc.coefficients[0]
        dens = conditional_vol_density(c, sc.vol, vd.sigma0, noise, vd.t, vd.n_inner,
                                       bandwidth=vd.bandwidth, seed=seed)
        reports = [ComparisonReport(sc.name, "kde_mass", dens.mass, 1.0, 1e-6).to_dict()]
        cols, data = ("y", "density"), [dens.y, dens.density]
        if sc.vol.q_const is not None:
            mean, var = ou_conditional_density_oracle(c, sc.vol, vd.sigma0, noise, vd.t)
            ref = np.exp(-0.5 * (dens.y - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)
            cols, data = ("y", "density", "oracle"), [dens.y, dens.density, ref]
            reports.append(ComparisonReport(sc.name, "l1_to_oracle",
                                            l1_to_gaussian(dens.y, dens.density, mean, var),
                                            0.0, 0.05).to_dict())
            reports.append(ComparisonReport(sc.name, "kde_sup", float(dens.density.max()),
                                            1 / math.sqrt(2 * math.pi * var), 0.05).to_dict())
        results.add("vol_density.csv", Table(cols, zip(*data)))
        results.add("vol_density_report.jsonl", JsonLines(reports))

    if "smooth-study" in sc.tasks:
        ss = sc.smooth_study
        m = LampertiMap(sc.vol, sc.coefficients[0])
        z = np.linspace(ss.z_min, ss.z_max, ss.nz)
        v_lo, v_hi = float(m.Q(ss.z_min)), float(m.Q(ss.z_max))
        y = np.linspace(v_lo, v_hi, 801)
        table = []
        for name, (u, du) in preset_profiles(z, ss.bump_sd).items():
            rows = convergence_study(u, m, ss.epsilons, z_grid=z, y_grid=y, du=du)
            table.extend((name, r.epsilon, r.distance, r.d1_distance) for r in rows)
        results.add("smooth_study.csv", Table(("profile", "epsilon", "distance", "d1_distance"),
                                              table))

    if "energy-residual" in sc.tasks:
        c = sc.coefficients[0]
        sol = state["solved"][0]
        kernel = TransformedKernel(sc.energy_epsilon, LampertiMap(sc.vol, c))
        ident = energy_identity(sol, c, sc.vol, kernel, sol.snapshots[0])
        results.add("energy.json", JsonDoc({"epsilon": sc.energy_epsilon, "terms": ident.terms,
                                            "lhs": ident.lhs, "rhs": ident.rhs,
                                            "residual": ident.residual,
                                            "finite": ident.finite}))
    return results

