"""Grids, field containers, bilinear interpolation and cloud-in-cell deposit.

Fields live on a cell-centered ``n x n`` grid covering the box ``[-L, L]^2``.
Arrays are indexed ``[i, j]`` with ``i`` along the first coordinate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12


class MFGError(Exception):
    """Base class for solver errors."""


class OutOfDomain(MFGError):
    """A point left the computational box (the box is too small for the dynamics)."""


class NonFinite(MFGError):
    """NaN or Inf appeared in a computed field."""


class GridMismatch(MFGError):
    """Two objects that must share a grid do not."""


class MissingParticles(MFGError):
    """A particle-based diagnostic was requested on a curve without clouds."""


@dataclass(frozen=True)
class Grid2D:
    L: float
    n: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"grid half width must be > 0, got {self.L}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid.n must be even and >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def centers(self) -> np.ndarray:
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.centers
        return np.meshgrid(c, c, indexing="ij")

    def points(self) -> np.ndarray:
        """All cell centers as an ``(n*n, 2)`` array in row-major order."""
        X, Y = self.mesh()
        return np.stack([X.ravel(), Y.ravel()], axis=1)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_t: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be > 0, got {self.T}")
        if self.n_t < 2:
            raise ValueError(f"time.n_t must be >= 2, got {self.n_t}")

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt


@dataclass
class ParticleCloud:
    """Equal-weight atoms; every particle carries mass ``1 / N_p``."""

    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.positions) < 1:
            raise ValueError("a particle cloud needs at least one particle")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def weight(self) -> float:
        return 1.0 / self.n


@dataclass
class DensityField:
    grid: Grid2D
    mass: np.ndarray
    M_tot: float = 1.0

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.grid.n, self.grid.n):
            raise GridMismatch(f"mass array {self.mass.shape} does not match grid n={self.grid.n}")

    def validate(self, tol: float = MASS_TOL) -> None:
        if np.any(self.mass < 0):
            raise ValueError("negative cell mass")
        err = abs(self.mass.sum() - 1.0)
        if err > tol:
            raise ValueError(f"total mass deviates from 1 by {err:.3e}")

    @property
    def density(self) -> np.ndarray:
        return self.mass / self.grid.h**2

    @property
    def physical_density(self) -> np.ndarray:
        return self.M_tot * self.density


@dataclass
class MeasureCurve:
    """Density snapshots at every time node, optionally with the particle clouds behind them.

    ``masses`` has shape ``(n_t + 1, n, n)``; ``clouds`` (if present) has shape
    ``(n_t + 1, N_p, 2)``.
    """

    grid: Grid2D
    tgrid: TimeGrid
    masses: np.ndarray
    clouds: np.ndarray | None = None
    M_tot: float = 1.0

    def __post_init__(self):
        K, n = self.tgrid.n_t + 1, self.grid.n
        if self.masses.shape != (K, n, n):
            raise GridMismatch(f"curve masses {self.masses.shape} != {(K, n, n)}")
        if self.clouds is not None and (self.clouds.ndim != 3 or self.clouds.shape[0] != K):
            raise GridMismatch(f"curve clouds {self.clouds.shape} do not match {K} time nodes")

    @classmethod
    def constant(cls, rho: DensityField, tgrid: TimeGrid) -> MeasureCurve:
        masses = np.broadcast_to(rho.mass, (tgrid.n_t + 1, *rho.mass.shape)).copy()
        return cls(rho.grid, tgrid, masses, None, rho.M_tot)

    def snapshot(self, k: int) -> DensityField:
        return DensityField(self.grid, self.masses[k], self.M_tot)

    def mass_errors(self) -> np.ndarray:
        return np.abs(self.masses.reshape(len(self.masses), -1).sum(axis=1) - 1.0)


@dataclass
class ValueField:
    """Nodal values ``values[k, i, j]`` and their gradients ``gradients[k, i, j, :]``."""

    values: np.ndarray
    gradients: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NonFinite("value field contains NaN/Inf")


def check_same_grid(a: Grid2D, b: Grid2D) -> None:
    if a != b:
        raise GridMismatch(f"{a} != {b}")


def _clamp_to_box(grid: Grid2D, pts: np.ndarray, tol: float) -> np.ndarray:
    """Clamp points into the box, raising if any lies more than ``tol`` outside."""
    L = grid.L
    excess = np.max(np.abs(pts), axis=-1) - L if pts.size else np.zeros(0)
    if np.any(excess > tol) or not np.all(np.isfinite(pts)):
        bad = int(np.argmax(np.where(np.isfinite(excess), excess, np.inf)))
        raise OutOfDomain(
            f"point {np.reshape(pts, (-1, 2))[bad]} lies outside the box [-{L}, {L}]^2 "
            f"(tolerance {tol:g})"
        )
    return np.clip(pts, -L, L)


def cell_coords(grid: Grid2D, pts: np.ndarray):
    """Lower-left node indices and fractional offsets for points already inside the box.

    Positions outside the hull of cell centers are pinned to the outermost
    center, so the outer half cell sees a constant extension.
    """
    n = grid.n
    s = (pts + grid.L) / grid.h - 0.5
    s = np.clip(s, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(s).astype(np.intp), n - 2)
    t = s - i0
    return i0[..., 0], i0[..., 1], t[..., 0], t[..., 1]


def _lerp2(f, i0, j0, tx, ty):
    # lerp form reproduces constant fields exactly
    f00 = f[i0, j0]
    f10 = f[i0 + 1, j0]
    f01 = f[i0, j0 + 1]
    f11 = f[i0 + 1, j0 + 1]
    if f00.ndim > tx.ndim:
        tx = tx[..., None]
        ty = ty[..., None]
    a = f00 + tx * (f10 - f00)
    b = f01 + tx * (f11 - f01)
    return a + ty * (b - a)


def interpolate_scalar(field: np.ndarray, grid: Grid2D, x) -> np.ndarray | float:
    """Bilinear interpolation of a nodal field at one point or an ``(N, 2)`` array of points.

    Points up to one cell outside the box are clamped onto it; farther points
    raise :class:`OutOfDomain`. Works for vector fields of shape ``(n, n, d)`` too.
    """
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = _clamp_to_box(grid, pts.reshape(-1, 2), grid.h)
    out = _lerp2(np.asarray(field), *cell_coords(grid, pts))
    return out[0] if scalar else out


interpolate_vector = interpolate_scalar


def deposit(cloud: ParticleCloud | np.ndarray, grid: Grid2D, M_tot: float = 1.0) -> DensityField:
    """Cloud-in-cell deposit: each particle's weight is split bilinearly over 4 cells."""
    pos = cloud.positions if isinstance(cloud, ParticleCloud) else np.asarray(cloud, float).reshape(-1, 2)
    pos = _clamp_to_box(grid, pos, 0.0)
    return DensityField(grid, deposit_masses(pos, grid), M_tot)


def deposit_masses(pos: np.ndarray, grid: Grid2D) -> np.ndarray:
    n = grid.n
    w = 1.0 / len(pos)
    i0, j0, tx, ty = cell_coords(grid, pos)
    idx = np.concatenate([i0 * n + j0, (i0 + 1) * n + j0, i0 * n + j0 + 1, (i0 + 1) * n + j0 + 1])
    wts = np.concatenate([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]) * w
    return np.bincount(idx, weights=wts, minlength=n * n).reshape(n, n)


def ring_mass(mass: np.ndarray, width: int = 2) -> float:
    """Mass sitting in the outermost ``width`` cells of the box."""
    ring = np.ones(mass.shape, dtype=bool)
    ring[width:-width, width:-width] = False
    return float(mass[ring].sum())
