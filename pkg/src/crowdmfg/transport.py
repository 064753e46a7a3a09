"""Forward transport: push the initial particle cloud along y' = -Du + f and deposit.

The density curve is literally the push-forward of the initial cloud by the
characteristic flow; grid densities are only produced for coupling and output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    DensityField,
    Grid2D,
    MeasureCurve,
    MissingParticles,
    OutOfDomain,
    ParticleCloud,
    TimeGrid,
    _clamp_to_box,
    _lerp2,
    cell_coords,
    deposit_masses,
    ring_mass,
)
from .hjb import HjbSolution

logger = logging.getLogger(__name__)


@dataclass
class FlowVelocitySampler:
    """Gradient and drift slices at one time node."""

    grad: np.ndarray  # (n, n, 2)
    drift: np.ndarray  # (n, n, 2)
    grid: Grid2D

    def __post_init__(self):
        if not (np.all(np.isfinite(self.grad)) and np.all(np.isfinite(self.drift))):
            raise ValueError("velocity sampler fields must be finite")
        self._packed = np.concatenate([self.grad, self.drift], axis=-1)

    def sample(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated gradient and drift at points ``x`` of shape ``(N, 2)``."""
        pts = _clamp_to_box(self.grid, x, self.grid.h)
        v = _lerp2(self._packed, *cell_coords(self.grid, pts))
        return v[:, :2], v[:, 2:]

    def velocity(self, x: np.ndarray) -> np.ndarray:
        du, f = self.sample(x)
        return -du + f


def velocity_at(s: FlowVelocitySampler, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    v = s.velocity(x.reshape(-1, 2))
    return v[0] if x.ndim == 1 else v


def sampler_at(hjb: HjbSolution, k: int) -> FlowVelocitySampler:
    return FlowVelocitySampler(hjb.value.gradients[k], hjb.drift[k], hjb.grid)


def advect(cloud, s0: FlowVelocitySampler, s1: FlowVelocitySampler, dt: float):
    """One midpoint (RK2) step; the midpoint velocity averages the two time slices.

    Accepts a :class:`ParticleCloud` or a raw ``(N, 2)`` position array and
    returns the same kind.
    """
    is_cloud = isinstance(cloud, ParticleCloud)
    x = cloud.positions if is_cloud else np.asarray(cloud, dtype=float)
    k1 = s0.velocity(x)
    xm = x + (0.5 * dt) * k1
    k2 = 0.5 * (s0.velocity(xm) + s1.velocity(xm))
    xn = x + dt * k2
    L = s0.grid.L
    outside = np.max(np.abs(xn), axis=1) > L
    if np.any(outside):
        idx = int(np.argmax(outside))
        raise OutOfDomain(f"particle {idx} left the box at {xn[idx]} (box half width {L})")
    return ParticleCloud(xn) if is_cloud else xn


def push_forward_curve(
    cloud0: ParticleCloud,
    hjb: HjbSolution,
    m: MeasureCurve | None = None,
    grid: Grid2D | None = None,
    tg: TimeGrid | None = None,
    *,
    M_tot: float = 1.0,
    ring_warn: bool = True,
) -> MeasureCurve:
    """Advect the cloud through every step and deposit each snapshot.

    The drift comes from ``hjb.drift``, i.e. the interaction field of the frozen
    curve ``m`` the value function was solved against.
    """
    grid = grid or hjb.grid
    tg = tg or hjb.tgrid
    K = tg.n_t + 1
    clouds = np.empty((K, cloud0.n, 2))
    masses = np.empty((K, grid.n, grid.n))
    clouds[0] = _clamp_to_box(grid, cloud0.positions, 0.0)
    masses[0] = deposit_masses(clouds[0], grid)
    s_prev = sampler_at(hjb, 0)
    for k in range(tg.n_t):
        s_next = sampler_at(hjb, k + 1)
        clouds[k + 1] = advect(clouds[k], s_prev, s_next, tg.dt)
        masses[k + 1] = deposit_masses(clouds[k + 1], grid)
        s_prev = s_next
    if ring_warn:
        worst = max(ring_mass(mk) for mk in masses)
        if worst > 0:
            logger.warning("mass %.3g entered the outer 2-cell ring of the box; consider a larger L", worst)
    return MeasureCurve(grid, tg, masses, clouds, M_tot)


def support_radius(rho: DensityField, mass_tol: float = 0.0) -> float:
    """Smallest r such that cells centered outside B(0, r) hold at most ``mass_tol``."""
    X, Y = rho.grid.mesh()
    d = np.hypot(X, Y).ravel()
    mass = rho.mass.ravel()
    order = np.argsort(d, kind="stable")
    d, mass = d[order], mass[order]
    # tail[k] = mass of cells strictly after position k
    tail = np.concatenate([np.cumsum(mass[::-1])[::-1][1:], [0.0]])
    if mass.sum() <= mass_tol:
        return 0.0
    ok = np.nonzero(tail <= mass_tol)[0]
    return float(d[ok[0]])


def curve_lipschitz_estimate(mu: MeasureCurve) -> float:
    """Max over steps of mean particle displacement / dt (an upper bound on W1 speed)."""
    if mu.clouds is None:
        raise MissingParticles("curve_lipschitz_estimate needs particle clouds")
    steps = np.diff(mu.clouds, axis=0)
    disp = np.sqrt(np.sum(steps * steps, axis=-1)).mean(axis=1)
    return float(disp.max() / mu.tgrid.dt)
