"""Command-line front end.

    crowdmfg solve        --config run.toml [--output DIR] [--seed N] [--threads N]
    crowdmfg solve-multi  --config run.toml ...
    crowdmfg validate-lq  --config run.toml ...
    crowdmfg trajectories --config run.toml --output SOLUTION_DIR
    crowdmfg w1 a.csv b.csv

Exit codes: 0 success, 1 configuration error, 2 no convergence (artifacts are
still written), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, effective_config_text, parse_config
from .control import pontryagin_residual, simulate_trajectories
from .core import MFGError, MeasureCurve, ValueField
from .hjb import ControlGrid, HjbSolution, gradient_field, model_fields, semiconcavity_estimate
from .metrics import w1_sliced
from .mfgsolve import Solution, gaussian_density, initial_cloud, initial_curve, apply_T, solve_multi
from .model import CostParams, KernelParams, ModelParams

logger = logging.getLogger("crowdmfg")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_NUMERIC = 0, 1, 2, 3
ESTIMATOR = "sliced W1 over a fixed direction fan (a lower bound on W1)"


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("MFG_LOG", "info").lower(), logging.INFO
    )
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _threads(n: int | None) -> int:
    import numba

    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


def load_config(args) -> RunConfig:
    text = Path(args.config).read_text(encoding="utf-8")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["solve.seed"] = args.seed
    if getattr(args, "output", None) is not None:
        overrides["output.dir"] = args.output
    return parse_config(text, overrides)


# ---------------------------------------------------------------- artifacts


def _snapshots(K: int, every: int) -> list[int]:
    ks = list(range(0, K, every))
    if ks[-1] != K - 1:
        ks.append(K - 1)
    return ks


def _trajectory_rows(hjb: HjbSolution, mp: ModelParams, starts: np.ndarray):
    rows = []
    trajs = simulate_trajectories(hjb, mp, 0, starts) if len(starts) else []
    for p, tr in enumerate(trajs):
        for s in range(len(tr.times)):
            rows.append((p, s, float(tr.times[s]), *tr.states[s].tolist(), *tr.controls[s].tolist(), tr.cost))
    return rows


def _summary(sol: Solution, rc: RunConfig) -> dict:
    d = sol.diagnostics
    return {
        "iterations": d.iterations,
        "residual_history": d.residuals,
        "final_residual": d.final_residual,
        "residual_estimator": ESTIMATOR,
        "tol_fp": rc.solve.tol_fp,
        "converged": sol.converged,
        "mass_error_max": max(max(d.mass_errors), float(sol.density.mass_errors().max())),
        "c2_hat_max": max(d.c2_hat),
        "c2_hat_final": float(np.max(sol.value.c2_hat)),
        "support_radius_max": max(d.support_radii) if d.support_radii else None,
        "max_density": max(d.max_densities) if d.max_densities else None,
        "curve_lipschitz_max": max(d.lipschitz),
        "support_within_cap": d.support_ok,
        "density_within_cap": d.density_ok,
        "nash_gap": d.nash,
        "A_max": sol.value.controls.A_max,
        "n_r": sol.value.controls.n_r,
        "n_theta": sol.value.controls.n_theta,
        "n_particles": sol.cloud0.n,
        "seed": rc.solve.seed,
    }


def write_solution(out: Path, sol: Solution, mp: ModelParams, rc: RunConfig) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    grid = sol.density.grid
    for k in _snapshots(len(sol.density.masses), rc.output_every):
        io.write_density_csv(out / f"density_{k:04d}.csv", sol.density.snapshot(k))
        io.write_value_csv(out / f"value_{k:04d}.csv", sol.value.value.values[k], grid)
    d = sol.diagnostics
    rows = []
    for it in range(d.iterations):
        rows.append((
            it + 1, d.residuals[it], d.c2_hat[it],
            d.support_radii[it] if d.support_radii else "", d.max_densities[it] if d.max_densities else "",
            d.mass_errors[it], d.lipschitz[it],
        ))
    io.write_table(out / "convergence.csv", "iteration,residual,c2_hat,support_radius,max_density,mass_error,lipschitz", rows)
    io.write_table(out / "trajectories.csv", "start,k,t,x,y,a_x,a_y,cost", _trajectory_rows(sol.value, mp, rc.traj_starts))
    summary = _summary(sol, rc)
    io.write_json(out / "summary.json", summary)
    return summary


def _write_run_info(out: Path, threads: int, started: float, extra: dict | None = None) -> None:
    info = {"threads": threads, "wall_time_s": time.perf_counter() - started}
    info.update(extra or {})
    io.write_json(out / "run_info.json", info)


# ---------------------------------------------------------------- subcommands


def cmd_solve(rc: RunConfig, threads: int) -> int:
    started = time.perf_counter()
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.toml").write_text(effective_config_text(rc))
    pop = rc.populations[0] if rc.populations else None
    mp, init = rc.model, rc.init
    if pop is not None and len(rc.populations) == 1:
        mp, init = pop.model, pop.init
    sols = solve_multi([(mp, init.build(rc.grid, rc.solve, mp.M_tot))], None, rc.solve, rc.grids)
    sol = sols[0]
    summary = write_solution(out, sol, mp, rc)
    _write_run_info(out, threads, started, {"iteration_wall_times_s": sol.diagnostics.wall_times})
    print(f"iterations {summary['iterations']}  final residual {summary['final_residual']!r}  converged {sol.converged}")
    return EXIT_OK if sol.converged else EXIT_NONCONV


def cmd_solve_multi(rc: RunConfig, threads: int) -> int:
    started = time.perf_counter()
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.toml").write_text(effective_config_text(rc))
    pops = [(p.model, p.init.build(rc.grid, rc.solve, p.model.M_tot)) for p in rc.populations]
    sols = solve_multi(pops, rc.coupling, rc.solve, rc.grids)
    per = []
    for j, (sol, p) in enumerate(zip(sols, rc.populations)):
        per.append(write_solution(out / f"pop{j + 1}", sol, p.model, rc))
    top = {
        "populations": len(sols),
        "converged": sols[0].converged,
        "iterations": per[0]["iterations"],
        "residual_history": [max(r) for r in zip(*(s.diagnostics.residuals for s in sols))],
        "final_residual": max(s.diagnostics.final_residual for s in sols),
        "residual_estimator": ESTIMATOR,
        "mass_error_max": max(s["mass_error_max"] for s in per),
        "c2_hat_max": max(s["c2_hat_max"] for s in per),
        "support_radius_max": max((s["support_radius_max"] or 0.0) for s in per),
        "nash_gap": [s["nash_gap"] for s in per],
    }
    io.write_json(out / "summary.json", top)
    _write_run_info(out, threads, started, {"iteration_wall_times_s": sols[0].diagnostics.wall_times})
    print(f"populations {len(sols)}  iterations {top['iterations']}  final residual {top['final_residual']!r}  converged {top['converged']}")
    return EXIT_OK if top["converged"] else EXIT_NONCONV


def lq_report(rc: RunConfig) -> dict:
    """LQ benchmark on the configured grids: kappa = 0, no congestion, quadratic terminal, c_T = 1."""
    T = rc.tgrid.T
    eps = rc.model.cost.eps_run
    mp = ModelParams(KernelParams(kappa=0.0), CostParams(eps_run=eps, terminal="quadratic", c_T=1.0))
    solve = replace(rc.solve, theta=1.0)
    cloud0 = initial_cloud(gaussian_density(rc.grid, (0.0, 0.0), 0.5), rc.grids, solve)
    curve, hjb = apply_T(initial_curve(cloud0, rc.grids), mp, solve, rc.grids, cloud0)
    X, Y = rc.grid.mesh()
    r2 = X**2 + Y**2
    probe = r2 <= 1.0
    rows = []
    for s in (0.0, 0.25, 0.5, 0.75):
        k = int(round(s / rc.tgrid.dt))
        t = rc.tgrid.nodes[k]
        exact = r2 / (2.0 * (1.0 + T - t)) + eps * (T - t)
        err = np.abs(hjb.value.values[k] - exact)[probe] / np.abs(exact[probe])
        rows.append(("value_rel_err", float(t), float(err.max())))
    c2 = max(abs(hjb.c2_hat[k] - 1.0 / (1.0 + T - t)) for k, t in enumerate(rc.tgrid.nodes))
    m2 = np.mean(np.sum(curve.clouds**2, axis=-1), axis=1)
    for s in (0.25, 0.5, 0.75, 1.0):
        k = int(round(s * T / rc.tgrid.dt))
        t = rc.tgrid.nodes[k]
        rows.append(("second_moment_rel_err", float(t), float(abs(m2[k] / m2[0] / ((1 + T - t) / (1 + T)) ** 2 - 1))))
    tr = simulate_trajectories(hjb, mp, 0, np.array([[1.0, 0.0]]))[0]
    land = float(np.linalg.norm(tr.states[-1] - np.array([1.0 / (1.0 + T), 0.0])) / (1.0 / (1.0 + T)))
    ode, term = pontryagin_residual(tr, hjb, mp)
    return {
        "rows": rows,
        "value_rel_err_t0": rows[0][2],
        "c2_abs_err": float(c2),
        "landing_rel_err": land,
        "pontryagin_ode": ode,
        "pontryagin_terminal": term,
        "cost_from_1_0": tr.cost,
        "cost_exact": 1.0 / (2.0 * (1.0 + T)) + eps * T,
        "mass_error_max": float(curve.mass_errors().max()),
    }


def cmd_validate_lq(rc: RunConfig, threads: int) -> int:
    started = time.perf_counter()
    rep = lq_report(rc)
    print(f"LQ benchmark  L={rc.grid.L} n={rc.grid.n} n_t={rc.tgrid.n_t} T={rc.tgrid.T}")
    print(f"{'quantity':<24}{'t':>8}{'error':>14}")
    for name, t, err in rep["rows"]:
        print(f"{name:<24}{t:>8.3f}{err:>14.3e}")
    print(f"{'c2_hat_abs_err':<24}{'all':>8}{rep['c2_abs_err']:>14.3e}")
    print(f"{'landing_rel_err':<24}{'T':>8}{rep['landing_rel_err']:>14.3e}")
    print(f"{'adjoint_terminal':<24}{'T':>8}{rep['pontryagin_terminal']:>14.3e}")
    print(f"{'adjoint_ode_l2':<24}{'-':>8}{rep['pontryagin_ode']:>14.3e}")
    print(f"max relative value error {rep['value_rel_err_t0']!r}")
    print(f"elapsed {time.perf_counter() - started:.1f}s on {threads} thread(s)")
    return EXIT_OK if rep["value_rel_err_t0"] <= 0.02 else EXIT_NUMERIC


def load_solution(rc: RunConfig, sol_dir: Path, mp: ModelParams) -> HjbSolution:
    """Rebuild the value function and frozen-curve fields from a solution directory."""
    import json

    summary = json.loads((sol_dir / "summary.json").read_text())
    K = rc.tgrid.n_t + 1
    values = np.empty((K, rc.grid.n, rc.grid.n))
    masses = np.empty_like(values)
    for k in range(K):
        vp, dp = sol_dir / f"value_{k:04d}.csv", sol_dir / f"density_{k:04d}.csv"
        if not (vp.exists() and dp.exists()):
            raise ConfigError(f"{sol_dir} lacks snapshot {k}; trajectories need output.every = 1")
        values[k] = io.read_value_csv(vp)[1]
        masses[k] = io.read_measure_csv(dp).mass
    curve = MeasureCurve(rc.grid, rc.tgrid, masses, None, mp.M_tot)
    f, g, psi = model_fields(curve, mp)
    grads = np.stack([gradient_field(v, rc.grid) for v in values])
    c2 = np.array([semiconcavity_estimate(v, rc.grid) for v in values])
    cg = ControlGrid(summary["A_max"], summary["n_r"], summary["n_theta"])
    return HjbSolution(ValueField(values, grads), c2, f, g, psi, cg, rc.grid, rc.tgrid)


def cmd_trajectories(rc: RunConfig, threads: int) -> int:
    sol_dir = Path(rc.output_dir)
    hjb = load_solution(rc, sol_dir, rc.model)
    rows = _trajectory_rows(hjb, rc.model, rc.traj_starts)
    io.write_table(sol_dir / "trajectories.csv", "start,k,t,x,y,a_x,a_y,cost", rows)
    for p in range(len(rc.traj_starts)):
        last = [r for r in rows if r[0] == p][-1]
        x0, y0 = map(float, rc.traj_starts[p])
        print(f"start {p}: ({x0!r}, {y0!r}) -> ({last[3]!r}, {last[4]!r})  cost {last[7]!r}")
    return EXIT_OK


def cmd_w1(a: str, b: str, n_dirs: int) -> int:
    ma, mb = io.read_measure_csv(a), io.read_measure_csv(b)
    print(repr(w1_sliced(ma, mb, n_dirs)))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "solve-multi": cmd_solve_multi,
    "validate-lq": cmd_validate_lq,
    "trajectories": cmd_trajectories,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crowdmfg", description="First-order crowd mean field game solver")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (flat dotted keys)")
        p.add_argument("--output", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="overrides solve.seed")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p = sub.add_parser("w1", help="sliced W1 between two measure CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--n-dirs", type=int, default=64)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "w1":
            return cmd_w1(args.a, args.b, args.n_dirs)
        rc = load_config(args)
        threads = _threads(args.threads)
        return COMMANDS[args.command](rc, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MFGError, ValueError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
