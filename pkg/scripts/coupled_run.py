"""Coupled desk runs: the centred configuration and an offset crowd that stalls.

The offset case (crowd at (-1, 0), target at (1, 0)) stalls near a residual of
0.08 at n = 96 and does not reach tol_fp within max_iter.

    python scripts/coupled_run.py [--case centred|offset|both] [--n 96]
"""

import argparse
import logging
import time
from pathlib import Path

import numba
import numpy as np

from crowdmfg.config import parse_config

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "coupled.toml"
OFFSET = {"init.center": (-1.0, 0.0), "init.sigma": 0.4, "cost.target": (1.0, 0.0)}


def solve(overrides):
    from crowdmfg.mfgsolve import picard_solve

    rc = parse_config(CONFIG.read_text(), overrides)
    t0 = time.perf_counter()
    sol = picard_solve(rc.model, rc.init.build(rc.grid, rc.solve), rc.solve, rc.grids)
    return sol, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--case", choices=["centred", "offset", "both"], default="both")
    ap.add_argument("--n", type=int, default=96)
    ap.add_argument("--max-iter", type=int, default=40)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    numba.set_num_threads(1)
    cases = ["centred", "offset"] if args.case == "both" else [args.case]
    for case in cases:
        ov = {"grid.n": args.n, "solve.max_iter": args.max_iter}
        if case == "offset":
            ov.update(OFFSET)
        sol, secs = solve(ov)
        d = sol.diagnostics
        print(f"\n{case}: converged={sol.converged} iterations={d.iterations} final={d.final_residual:.3e} ({secs:.0f}s)")
        print("residuals", np.array2string(np.asarray(d.residuals), precision=4, max_line_width=100))
        print(f"C2_hat {max(d.c2_hat):.3f}  support {max(d.support_radii):.3f}  density {max(d.max_densities):.3f}")
        if d.nash:
            print(f"nash max gap {d.nash['max_gap']:.3e} within eps: {d.nash['within_eps']}")


if __name__ == "__main__":
    main()
