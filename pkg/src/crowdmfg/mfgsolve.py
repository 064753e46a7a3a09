"""Fixed-point driver: T(m) = push-forward under the HJB feedback solved against m,
iterated with damping until the curve reproduces itself."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .control import nash_gap
from .core import (
    DensityField,
    Grid2D,
    GridMismatch,
    MFGError,
    MeasureCurve,
    ParticleCloud,
    TimeGrid,
    check_same_grid,
    deposit_masses,
)
from .hjb import HjbOptions, HjbSolution, model_fields, solve_hjb_backward
from .metrics import sliced_grid_batch
from .model import ModelParams, interaction_field
from .transport import curve_lipschitz_estimate, push_forward_curve, support_radius

logger = logging.getLogger(__name__)


class NonConvergence(MFGError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    theta: float = 0.5
    tol_fp: float = 5e-3
    max_iter: int = 40
    n_particles: int = 40_000
    seed: int = 0
    support_cap: float = 2.5
    density_cap: float = 50.0
    eps_nash_abs: float = 0.05
    eps_nash_rel: float = 0.05
    verify: bool = True
    nash: bool = True
    nash_starts: int = 20
    n_dirs: int = 64
    hjb: HjbOptions = HjbOptions()

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError(f"solve.theta must lie in (0, 1], got {self.theta}")
        if not self.tol_fp > 0:
            raise ValueError("solve.tol_fp must be > 0")
        if self.max_iter < 1:
            raise ValueError("solve.max_iter must be >= 1")
        if self.n_particles < 100:
            raise ValueError("solve.n_particles must be >= 100")
        if self.n_dirs < 8:
            raise ValueError("solve.n_dirs must be >= 8")
        if not (self.support_cap > 0 and self.density_cap > 0):
            raise ValueError("solve.support_cap and solve.density_cap must be > 0")


@dataclass(frozen=True)
class Grids:
    grid: Grid2D
    tgrid: TimeGrid


@dataclass
class Diagnostics:
    """Per-iteration histories; every list gets one entry per completed iteration."""

    residuals: list[float] = field(default_factory=list)
    c2_hat: list[float] = field(default_factory=list)
    support_radii: list[float] = field(default_factory=list)
    max_densities: list[float] = field(default_factory=list)
    mass_errors: list[float] = field(default_factory=list)
    lipschitz: list[float] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    final_residual: float = float("nan")
    nash: dict | None = None
    support_ok: bool = True
    density_ok: bool = True
    nash_ok: bool = True

    @property
    def iterations(self) -> int:
        return len(self.residuals)


@dataclass
class Solution:
    value: HjbSolution
    density: MeasureCurve
    diagnostics: Diagnostics
    converged: bool
    cloud0: ParticleCloud


# ---------------------------------------------------------------- initial data


def gaussian_density(grid: Grid2D, center=(0.0, 0.0), sigma: float = 0.5, M_tot: float = 1.0) -> DensityField:
    """Gaussian sampled at cell centers and normalized to unit mass."""
    if not sigma > 0:
        raise ValueError("gaussian sigma must be > 0")
    X, Y = grid.mesh()
    w = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2.0 * sigma**2))
    return DensityField(grid, w / w.sum(), M_tot)


def uniform_box_density(grid: Grid2D, lo=(-1.0, -1.0), hi=(1.0, 1.0), M_tot: float = 1.0) -> DensityField:
    """Uniform on the rectangle [lo, hi], with exact cell overlap fractions."""
    e = np.linspace(-grid.L, grid.L, grid.n + 1)

    def overlap(a, b):
        return np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None)

    w = np.outer(overlap(lo[0], hi[0]), overlap(lo[1], hi[1]))
    if w.sum() <= 0:
        raise ValueError("uniform box does not intersect the domain")
    return DensityField(grid, w / w.sum(), M_tot)


def _apportion(mass: np.ndarray, N: int) -> np.ndarray:
    """Largest-remainder split of N particles proportional to cell masses (ties by flat index)."""
    flat = mass.ravel() / mass.sum()
    exact = flat * N
    counts = np.floor(exact).astype(np.int64)
    rem = N - int(counts.sum())
    if rem > 0:
        order = np.lexsort((np.arange(len(flat)), -(exact - counts)))
        counts[order[:rem]] += 1
    return counts.reshape(mass.shape)


def seed_cloud(rho: DensityField, N_p: int, seed: int) -> ParticleCloud:
    """Stratified sampling: each cell gets its apportioned count on a jittered sub-lattice.

    A cell with c particles is split into q x q sub-cells (q = ceil(sqrt(c)));
    c of them are chosen by a seeded permutation and one point is drawn uniformly
    inside each. The generator is counter-based (Philox) and cells are visited in
    flat index order, so the cloud depends only on (rho, N_p, seed).
    """
    grid = rho.grid
    counts = _apportion(rho.mass, N_p)
    rng = np.random.Generator(np.random.Philox(key=seed))
    h = grid.h
    out = np.empty((N_p, 2))
    pos = 0
    for flat in np.flatnonzero(counts):
        c = int(counts.flat[flat])
        i, j = divmod(int(flat), grid.n)
        q = int(np.ceil(np.sqrt(c)))
        cells = rng.permutation(q * q)[:c]
        jit = rng.random((c, 2))
        sub = np.stack([cells // q, cells % q], axis=1)
        out[pos : pos + c, 0] = -grid.L + h * (i + (sub[:, 0] + jit[:, 0]) / q)
        out[pos : pos + c, 1] = -grid.L + h * (j + (sub[:, 1] + jit[:, 1]) / q)
        pos += c
    return ParticleCloud(out)


def atoms_cloud(points, N_p: int) -> ParticleCloud:
    """Equal-weight atoms replicated to N_p particles (N_p must be a multiple of the atom count)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if N_p % len(pts):
        raise ValueError(f"n_particles={N_p} is not a multiple of the {len(pts)} atoms")
    return ParticleCloud(np.repeat(pts, N_p // len(pts), axis=0))


def initial_cloud(init, grids: Grids, cfg: SolveConfig) -> ParticleCloud:
    if isinstance(init, ParticleCloud):
        return init
    if isinstance(init, DensityField):
        check_same_grid(init.grid, grids.grid)
        return seed_cloud(init, cfg.n_particles, cfg.seed)
    raise TypeError("initial data must be a DensityField or a ParticleCloud")


def initial_curve(cloud0: ParticleCloud, grids: Grids, M_tot: float = 1.0) -> MeasureCurve:
    """The frozen curve at mu0 := deposit of the seeded cloud."""
    mu0 = DensityField(grids.grid, deposit_masses(cloud0.positions, grids.grid), M_tot)
    return MeasureCurve.constant(mu0, grids.tgrid)


# ---------------------------------------------------------------- the map T


def apply_T(
    m: MeasureCurve,
    mp: ModelParams,
    cfg: SolveConfig,
    grids: Grids,
    cloud0: ParticleCloud,
    *,
    fields=None,
) -> tuple[MeasureCurve, HjbSolution]:
    """HJB against the frozen curve, then push the seeded cloud forward with that feedback."""
    hjb = solve_hjb_backward(m, mp, grids.grid, grids.tgrid, options=cfg.hjb, fields=fields)
    out = push_forward_curve(cloud0, hjb, m, M_tot=mp.M_tot)
    return out, hjb


def damp(m_old: MeasureCurve, m_new: MeasureCurve, theta: float) -> MeasureCurve:
    """Cellwise (1 - theta) m_old + theta m_new; the clouds of m_new are carried along."""
    check_same_grid(m_old.grid, m_new.grid)
    if m_old.masses.shape != m_new.masses.shape:
        raise GridMismatch("curves have different time grids")
    if theta == 1.0:
        return m_new
    masses = (1.0 - theta) * m_old.masses + theta * m_new.masses
    return MeasureCurve(m_new.grid, m_new.tgrid, masses, m_new.clouds, m_new.M_tot)


def _coupled_fields(curves: list[MeasureCurve], mps: list[ModelParams], coupling: np.ndarray, j: int):
    """Model fields of population j: own costs, drift summed over every population it reacts to."""
    f, g, psi = model_fields(curves[j], replace(mps[j], kernel=mps[j].kernel.with_kappa(0.0)))
    for k, mk in enumerate(curves):
        kap = float(coupling[j, k])
        if kap != 0.0:
            f = f + interaction_field(mk.masses, mps[j].kernel.with_kappa(kap), mk.grid)
    return f, g, psi


def _record(diag: Diagnostics, curves: list[MeasureCurve], hjbs: list[HjbSolution], cfg: SolveConfig):
    diag.c2_hat.append(max(float(np.max(h.c2_hat)) for h in hjbs))
    diag.mass_errors.append(max(float(c.mass_errors().max()) for c in curves))
    diag.lipschitz.append(max(curve_lipschitz_estimate(c) for c in curves))
    if cfg.verify:
        rad = max(support_radius(c.snapshot(k), 1e-6) for c in curves for k in range(len(c.masses)))
        dens = max(float(np.max(c.masses)) / c.grid.h**2 * c.M_tot for c in curves)
        diag.support_radii.append(rad)
        diag.max_densities.append(dens)
        if rad > cfg.support_cap:
            diag.support_ok = False
            logger.warning("support radius %.3g exceeds cap %.3g", rad, cfg.support_cap)
        if dens > cfg.density_cap:
            diag.density_ok = False
            logger.warning("max density %.3g exceeds cap %.3g", dens, cfg.density_cap)


def nash_starts(cloud0: ParticleCloud, count: int, seed: int) -> np.ndarray:
    """Starts drawn from the initial cloud with a generator keyed off the run seed."""
    rng = np.random.Generator(np.random.Philox(key=seed + 1))
    idx = rng.choice(cloud0.n, size=min(count, cloud0.n), replace=False)
    return cloud0.positions[np.sort(idx)]


def solve_multi(
    pops: list[tuple[ModelParams, DensityField | ParticleCloud]],
    coupling,
    cfg: SolveConfig,
    grids: Grids,
) -> list[Solution]:
    """Damped Picard iteration on the tuple of M curves.

    ``coupling[j][k]`` scales population j's kernel against curve k; the diagonal
    must match each population's own ``kernel.kappa``. ``None`` means no cross
    interaction. Every population is seeded with the same seed.
    """
    M = len(pops)
    if M < 1:
        raise ValueError("need at least one population")
    mps = [p[0] for p in pops]
    if coupling is None:
        coupling = np.diag([mp.kernel.kappa for mp in mps])
    coupling = np.asarray(coupling, dtype=float)
    if coupling.shape != (M, M):
        raise ValueError(f"coupling matrix must be {M}x{M}, got {coupling.shape}")
    for j, mp in enumerate(mps):
        if coupling[j, j] != mp.kernel.kappa:
            raise ValueError(f"coupling[{j}][{j}] = {coupling[j, j]} differs from population kernel.kappa = {mp.kernel.kappa}")
    if np.any(coupling < 0):
        raise ValueError("coupling entries must be >= 0")

    clouds0 = [initial_cloud(p[1], grids, cfg) for p in pops]
    curves = [initial_curve(c, grids, mp.M_tot) for c, mp in zip(clouds0, mps)]
    diags = [Diagnostics() for _ in range(M)]
    shared = Diagnostics()

    def mapped(cs):
        outs, hjbs = [], []
        for j in range(M):
            fields = _coupled_fields(cs, mps, coupling, j)
            o, h = apply_T(cs[j], mps[j], cfg, grids, clouds0[j], fields=fields)
            outs.append(o)
            hjbs.append(h)
        return outs, hjbs

    def distance(a, b):
        per = [float(sliced_grid_batch(x.masses, y.masses, grids.grid, cfg.n_dirs).max()) for x, y in zip(a, b)]
        return max(per), per

    for it in range(cfg.max_iter):
        t0 = time.perf_counter()
        outs, hjbs = mapped(curves)
        res, per = distance(curves, outs)
        curves = [damp(c, o, cfg.theta) for c, o in zip(curves, outs)]
        shared.residuals.append(res)
        _record(shared, outs, hjbs, cfg)
        for j in range(M):
            diags[j].residuals.append(per[j])
            _record(diags[j], [outs[j]], [hjbs[j]], cfg)
        wall = time.perf_counter() - t0
        shared.wall_times.append(wall)
        for d in diags:
            d.wall_times.append(wall)
        logger.info("iteration %d: residual %.6g (%.1fs)", it + 1, res, wall)
        if not np.isfinite(res):
            break
        if res <= cfg.tol_fp:
            break

    # final solve against the returned curves; its residual is the reported one
    outs, hjbs = mapped(curves)
    final, per = distance(curves, outs)
    converged = bool(final <= cfg.tol_fp)
    if not converged:
        logger.warning("no convergence: final residual %.3g > tol %.3g", final, cfg.tol_fp)
    shared.final_residual = final
    sols = []
    for j in range(M):
        d = diags[j]
        d.final_residual = per[j]
        d.support_ok, d.density_ok = shared.support_ok, shared.density_ok
        if cfg.verify and cfg.nash:
            starts = nash_starts(clouds0[j], cfg.nash_starts, cfg.seed)
            ng = nash_gap(hjbs[j], mps[j], starts)
            d.nash_ok = ng.within(cfg.eps_nash_abs, cfg.eps_nash_rel)
            d.nash = {
                "max_gap": ng.max_gap,
                "mean_gap": ng.mean_gap,
                "starts": len(starts),
                "within_eps": d.nash_ok,
            }
        sols.append(Solution(hjbs[j], curves[j], d, converged, clouds0[j]))
    return sols


def picard_solve(mp: ModelParams, mu0, cfg: SolveConfig, grids: Grids) -> Solution:
    """Single-population damped Picard iteration starting from the frozen-mu0 curve."""
    return solve_multi([(mp, mu0)], None, cfg, grids)[0]
