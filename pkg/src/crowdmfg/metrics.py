"""Wasserstein-1 distances.

``w1_exact_small`` solves the assignment problem for small equal-weight atom
sets. ``w1_sliced`` is a deterministic lower bound: the largest exact 1D W1
over a fixed fan of projection directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .core import DensityField, Grid2D, GridMismatch, MFGError, MeasureCurve, ParticleCloud, check_same_grid

MAX_EXACT_ATOMS = 12


class SizeMismatch(MFGError):
    pass


class TooLarge(MFGError):
    pass


@dataclass
class AtomSet:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) < 1:
            raise ValueError("an atom set needs at least one atom")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("atom coordinates must be finite")

    @property
    def n(self) -> int:
        return len(self.points)


def _atoms(a) -> np.ndarray:
    if isinstance(a, (AtomSet, ParticleCloud)):
        return a.points if isinstance(a, AtomSet) else a.positions
    return AtomSet(a).points


def w1_exact_small(a, b) -> float:
    pa, pb = _atoms(a), _atoms(b)
    if len(pa) != len(pb):
        raise SizeMismatch(f"atom sets differ in size: {len(pa)} vs {len(pb)}")
    if len(pa) > MAX_EXACT_ATOMS:
        raise TooLarge(f"exact W1 limited to {MAX_EXACT_ATOMS} atoms, got {len(pa)}")
    cost = cdist(pa, pb)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(pa))


def directions(n_dirs: int) -> np.ndarray:
    th = np.pi * np.arange(n_dirs) / n_dirs
    return np.stack([np.cos(th), np.sin(th)], axis=1)


@lru_cache(maxsize=16)
def _grid_projection(L: float, n: int, n_dirs: int):
    """Per direction: sort order of projected cell centers and the gaps between them."""
    pts = Grid2D(L, n).points()
    orders, gaps = [], []
    for d in directions(n_dirs):
        p = pts @ d
        o = np.argsort(p, kind="stable")
        orders.append(o)
        gaps.append(np.diff(p[o]))
    return np.array(orders), np.array(gaps)


def _w1_1d_weighted(pa, wa, pb, wb) -> float:
    """Exact 1D W1 = integral of |F_a - F_b| between two weighted point sets."""
    u = np.unique(np.concatenate([pa, pb]))
    if len(u) < 2:
        return 0.0
    oa = np.argsort(pa, kind="stable")
    ob = np.argsort(pb, kind="stable")
    ca = np.concatenate([[0.0], np.cumsum(wa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(wb[ob])])
    Fa = ca[np.searchsorted(pa[oa], u[:-1], side="right")]
    Fb = cb[np.searchsorted(pb[ob], u[:-1], side="right")]
    return float(np.sum(np.abs(Fa - Fb) * np.diff(u)))


def w1_sliced(rho, sigma, n_dirs: int = 64) -> float:
    """Max over ``n_dirs`` directions (from angle 0) of the exact projected 1D W1."""
    if n_dirs < 8:
        raise ValueError("n_dirs must be >= 8")
    if isinstance(rho, DensityField) != isinstance(sigma, DensityField):
        raise TypeError("w1_sliced needs two density fields or two point clouds")
    if isinstance(rho, DensityField):
        check_same_grid(rho.grid, sigma.grid)
        return float(sliced_grid_batch(rho.mass[None], sigma.mass[None], rho.grid, n_dirs)[0])
    pa, pb = _atoms(rho), _atoms(sigma)
    wa = np.full(len(pa), 1.0 / len(pa))
    wb = np.full(len(pb), 1.0 / len(pb))
    return max(_w1_1d_weighted(pa @ d, wa, pb @ d, wb) for d in directions(n_dirs))


def sliced_grid_batch(ma: np.ndarray, mb: np.ndarray, grid: Grid2D, n_dirs: int = 64) -> np.ndarray:
    """Sliced W1 between stacks of mass arrays ``(K, n, n)``; one value per snapshot."""
    orders, gaps = _grid_projection(grid.L, grid.n, n_dirs)
    fa = ma.reshape(len(ma), -1)
    fb = mb.reshape(len(mb), -1)
    best = np.zeros(len(fa))
    for o, gap in zip(orders, gaps):
        Fa = np.cumsum(fa[:, o], axis=1)[:, :-1]
        Fb = np.cumsum(fb[:, o], axis=1)[:, :-1]
        best = np.maximum(best, np.abs(Fa - Fb) @ gap)
    return best


def curve_distance(mu: MeasureCurve, nu: MeasureCurve, n_dirs: int = 64) -> float:
    """Sup over time nodes of the sliced W1 between snapshots."""
    check_same_grid(mu.grid, nu.grid)
    if mu.masses.shape != nu.masses.shape:
        raise GridMismatch("curves have different time grids")
    return float(sliced_grid_batch(mu.masses, nu.masses, mu.grid, n_dirs).max())
