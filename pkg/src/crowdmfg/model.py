"""Crowd model: mollified repulsion kernel, non-local interaction velocity, costs.

The repulsion is ``-kappa * xi / |xi|^2``, switched off smoothly below ``r_o``
and mollified to zero between ``R - w_moll`` and ``R``. Both transitions use
the quintic smoothstep, so the kernel is C^2 everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .core import DensityField, Grid2D

TERMINAL_SHAPES = ("quadratic", "soft_target", "constant")


@dataclass(frozen=True)
class KernelParams:
    kappa: float = 0.5
    R: float = 1.0
    r_o: float = 0.2
    w_moll: float = 0.1

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kernel.kappa must be >= 0, got {self.kappa}")
        if not 0 < self.r_o < self.R:
            raise ValueError(f"kernel radii must satisfy 0 < r_o < R, got r_o={self.r_o}, R={self.R}")
        if not 0 < self.w_moll < self.r_o:
            raise ValueError(f"kernel.w_moll must lie in (0, r_o), got {self.w_moll}")

    def with_kappa(self, kappa: float) -> KernelParams:
        return replace(self, kappa=kappa)


@dataclass(frozen=True)
class CostParams:
    eps_run: float = 0.1
    c_cong: float = 0.0
    sigma_cong: float = 0.3
    terminal: str = "soft_target"
    target: tuple[float, float] = (0.0, 0.0)
    c_T: float = 1.0
    c_cong_T: float = 0.0

    def __post_init__(self):
        if not self.eps_run > 0:
            raise ValueError("eps_run must be > 0")
        if not self.sigma_cong > 0:
            raise ValueError("sigma_cong must be > 0")
        if not self.c_cong >= 0:
            raise ValueError("c_cong must be >= 0")
        if not self.c_cong_T >= 0:
            raise ValueError("c_cong_T must be >= 0")
        if self.terminal not in TERMINAL_SHAPES:
            raise ValueError(f"terminal shape must be one of {TERMINAL_SHAPES}, got {self.terminal!r}")
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))

    @property
    def density_independent(self) -> bool:
        return self.c_cong == 0 and self.c_cong_T == 0


@dataclass(frozen=True)
class ModelParams:
    kernel: KernelParams = KernelParams()
    cost: CostParams = CostParams()
    M_tot: float = 1.0

    def __post_init__(self):
        if not self.M_tot > 0:
            raise ValueError("M_tot must be > 0")


def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def _dsmoothstep5(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30.0 * s * s * (s - 1.0) ** 2, 0.0)


def _radial_profile(r, kp: KernelParams):
    """phi(r) with kernel_F(xi) = -kappa * phi(|xi|) * xi; also returns d phi / dr."""
    r = np.asarray(r, dtype=float)
    q = r * r / kp.r_o**2
    inner = smoothstep5(q)
    s_out = (r - (kp.R - kp.w_moll)) / kp.w_moll
    eta = 1.0 - smoothstep5(s_out)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r2 = np.where(r > 0, 1.0 / (r * r), 0.0)
        # inner(q)/r^2 is a polynomial in r^2 near 0; use its limit there
        phi = np.where(r > 0, inner * eta * inv_r2, 0.0)
        d_inner = _dsmoothstep5(q) * 2.0 * r / kp.r_o**2
        d_eta = -_dsmoothstep5(s_out) / kp.w_moll
        dphi = np.where(
            r > 0,
            (d_inner * eta + inner * d_eta) * inv_r2 - 2.0 * inner * eta * inv_r2 / np.where(r > 0, r, 1.0),
            0.0,
        )
    return phi, dphi


def kernel_F(xi, kp: KernelParams) -> np.ndarray:
    """Mollified repulsion velocity felt at ``x`` from a unit mass at ``x + xi``."""
    xi = np.asarray(xi, dtype=float)
    r = np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2)
    phi, _ = _radial_profile(r, kp)
    return -kp.kappa * phi[..., None] * xi


def kernel_lipschitz(kp: KernelParams, samples: int = 200_001) -> float:
    """sup |D kernel_F| (spectral norm), from a dense radial sweep of the analytic Jacobian.

    The Jacobian of ``-kappa * phi(r) * xi`` has eigenvalues ``-kappa * phi`` and
    ``-kappa * (phi + r phi')``.
    """
    r = np.linspace(0.0, kp.R, samples)
    phi, dphi = _radial_profile(r, kp)
    # phi(0) limit: inner(q) ~ 10 q^3, so phi -> 0
    return float(kp.kappa * np.max(np.maximum(np.abs(phi), np.abs(phi + r * dphi))))


def kernel_stencil(kp: KernelParams, h: float) -> np.ndarray:
    """Kernel sampled at lattice offsets ``(a h, b h)``, shape ``(2r+1, 2r+1, 2)``."""
    rad = math.ceil((kp.R + h) / h)
    off = np.arange(-rad, rad + 1) * h
    A, B = np.meshgrid(off, off, indexing="ij")
    return kernel_F(np.stack([A, B], axis=-1), kp)


def _masses_of(rho) -> np.ndarray:
    return rho.mass if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)


def interaction_velocity(rho: DensityField, x, kp: KernelParams) -> np.ndarray:
    """Midpoint-rule quadrature of the interaction integral at a single point ``x``."""
    grid = rho.grid
    x = np.asarray(x, dtype=float)
    c = grid.centers
    reach = kp.R + grid.h
    ii = np.nonzero(np.abs(c - x[0]) <= reach)[0]
    jj = np.nonzero(np.abs(c - x[1]) <= reach)[0]
    if kp.kappa == 0 or len(ii) == 0 or len(jj) == 0:
        return np.zeros(2)
    Y0, Y1 = np.meshgrid(c[ii], c[jj], indexing="ij")
    xi = np.stack([Y0 - x[0], Y1 - x[1]], axis=-1)
    m = rho.mass[np.ix_(ii, jj)]
    return np.einsum("ij,ijk->k", m, kernel_F(xi, kp))


def interaction_field(rho, kp: KernelParams, grid: Grid2D) -> np.ndarray:
    """Interaction velocity at every node: a truncated discrete convolution.

    ``rho`` may be a :class:`DensityField` or a mass array of shape ``(..., n, n)``;
    the result has shape ``(..., n, n, 2)``.
    """
    m = _masses_of(rho)
    out = np.zeros(m.shape + (2,))
    if kp.kappa == 0:
        return out
    K = kernel_stencil(kp, grid.h)
    flat = m.reshape(-1, grid.n, grid.n)
    res = out.reshape(-1, grid.n, grid.n, 2)
    for s in range(len(flat)):
        for comp in range(2):
            res[s, :, :, comp] = ndimage.correlate(flat[s], K[:, :, comp], mode="constant", cval=0.0)
    return out


def gaussian_norm(sigma: float) -> float:
    """Integral of exp(-|y|^2 / 2 sigma^2) over the disc of radius 3 sigma."""
    return 2.0 * math.pi * sigma**2 * (1.0 - math.exp(-4.5))


def gaussian_kernel(r2, sigma: float) -> np.ndarray:
    r2 = np.asarray(r2, dtype=float)
    g = np.exp(-r2 / (2.0 * sigma**2)) / gaussian_norm(sigma)
    return np.where(r2 <= (3.0 * sigma) ** 2, g, 0.0)


def gaussian_stencil(sigma: float, h: float) -> np.ndarray:
    rad = math.ceil(3.0 * sigma / h)
    off = np.arange(-rad, rad + 1) * h
    A, B = np.meshgrid(off, off, indexing="ij")
    return gaussian_kernel(A**2 + B**2, sigma)


def congestion_field(rho, sigma: float, grid: Grid2D) -> np.ndarray:
    """Smoothed density ``(G_sigma * rho)`` at every node, shape ``(..., n, n)``."""
    m = _masses_of(rho)
    G = gaussian_stencil(sigma, grid.h)
    flat = m.reshape(-1, grid.n, grid.n)
    out = np.empty_like(flat)
    for s in range(len(flat)):
        out[s] = ndimage.correlate(flat[s], G, mode="constant", cval=0.0)
    return out.reshape(m.shape)


def congestion_at(rho: DensityField, x, sigma: float) -> float:
    grid = rho.grid
    x = np.asarray(x, dtype=float)
    X, Y = grid.mesh()
    return float(np.sum(rho.mass * gaussian_kernel((X - x[0]) ** 2 + (Y - x[1]) ** 2, sigma)))


def running_cost(rho: DensityField, x, cp: CostParams) -> float:
    if cp.c_cong == 0:
        return cp.eps_run
    return cp.eps_run + cp.c_cong * congestion_at(rho, x, cp.sigma_cong)


def running_cost_field(rho, cp: CostParams, grid: Grid2D) -> np.ndarray:
    m = _masses_of(rho)
    if cp.c_cong == 0:
        return np.full(m.shape, cp.eps_run)
    return cp.eps_run + cp.c_cong * congestion_field(m, cp.sigma_cong, grid)


def terminal_shape(x, cp: CostParams) -> np.ndarray:
    """Density-independent part of the terminal cost, vectorized over ``(..., 2)`` points."""
    x = np.asarray(x, dtype=float)
    d2 = (x[..., 0] - cp.target[0]) ** 2 + (x[..., 1] - cp.target[1]) ** 2
    if cp.terminal == "quadratic":
        return cp.c_T * 0.5 * d2
    if cp.terminal == "soft_target":
        return cp.c_T * (np.sqrt(1.0 + d2) - 1.0)
    return np.full(d2.shape, float(cp.c_T))


def terminal_shape_gradient(x, cp: CostParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(cp.target)
    if cp.terminal == "quadratic":
        return cp.c_T * d
    if cp.terminal == "soft_target":
        return cp.c_T * d / np.sqrt(1.0 + np.sum(d * d, axis=-1, keepdims=True))
    return np.zeros_like(d)


def terminal_cost(rho_T: DensityField, x, cp: CostParams) -> float:
    val = float(terminal_shape(x, cp))
    if cp.c_cong_T > 0:
        val += cp.c_cong_T * congestion_at(rho_T, x, cp.sigma_cong)
    return val


def terminal_cost_field(rho_T, cp: CostParams, grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    psi = terminal_shape(np.stack([X, Y], axis=-1), cp)
    if cp.c_cong_T > 0:
        psi = psi + cp.c_cong_T * congestion_field(_masses_of(rho_T), cp.sigma_cong, grid)
    return psi
