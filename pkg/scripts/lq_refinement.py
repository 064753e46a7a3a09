"""LQ benchmark across resolutions: value error, C2_hat and the adjoint residuals for each scheme.

    python scripts/lq_refinement.py [--schemes corrected bilinear] [--levels 3]
"""

import argparse
import time

import numba
import numpy as np

from crowdmfg import CostParams, DensityField, Grid2D, HjbOptions, KernelParams, ModelParams, TimeGrid
from crowdmfg.control import pontryagin_residual, simulate_trajectories
from crowdmfg.core import MeasureCurve
from crowdmfg.hjb import solve_hjb_backward


def run(n, n_t, scheme, L=3.0, T=1.0, eps=0.1):
    grid, tg = Grid2D(L, n), TimeGrid(T, n_t)
    mp = ModelParams(KernelParams(kappa=0.0), CostParams(eps_run=eps, terminal="quadratic", c_T=1.0))
    m = MeasureCurve.constant(DensityField(grid, np.full((n, n), 1.0 / n**2)), tg)
    t0 = time.perf_counter()
    hjb = solve_hjb_backward(m, mp, grid, tg, options=HjbOptions(scheme=scheme))
    secs = time.perf_counter() - t0
    X, Y = grid.mesh()
    r2 = X**2 + Y**2
    exact = r2 / (2.0 * (1.0 + T)) + eps * T
    probe = r2 <= 1.0
    verr = float(np.max(np.abs(hjb.value.values[0] - exact)[probe] / exact[probe]))
    c2 = float(np.max(np.abs(hjb.c2_hat - 1.0 / (1.0 + T - tg.nodes))))
    tr = simulate_trajectories(hjb, mp, 0, np.array([[1.0, 0.0]]))[0]
    ode, term = pontryagin_residual(tr, hjb, mp)
    return verr, c2, ode, term, secs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--schemes", nargs="+", default=["corrected", "bilinear"])
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()
    numba.set_num_threads(1)
    print(f"{'scheme':<10}{'n':>5}{'n_t':>5}{'value err':>12}{'C2 err':>11}{'adj ODE':>11}{'ratio':>7}{'adj T':>10}{'s':>7}")
    for scheme in args.schemes:
        prev = None
        for lev in range(args.levels):
            n, n_t = 64 * 2**lev, 50 * 2**lev
            verr, c2, ode, term, secs = run(n, n_t, scheme)
            ratio = f"{prev / ode:7.2f}" if prev else " " * 7
            print(f"{scheme:<10}{n:>5}{n_t:>5}{verr:>12.2e}{c2:>11.2e}{ode:>11.3e}{ratio}{term:>10.1e}{secs:>7.1f}")
            prev = ode


if __name__ == "__main__":
    main()
