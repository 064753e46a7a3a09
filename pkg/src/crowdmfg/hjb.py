"""Backward semi-Lagrangian solver for the frozen-curve HJB equation

    -u_t + |Du|^2 / 2 - Du . f - g = 0,   u(T) = psi.

One step minimizes ``dt (|a|^2/2 + g(x)) + u_next(x + dt (a + f(x)))`` over a polar
control grid plus two gradient candidates. ``u_next`` is read off the grid by
bilinear interpolation, by default with the quadratic error term of bilinear
interpolation subtracted (scheme ``"corrected"``). ``"bilinear"`` keeps plain
interpolation; with ``refine=False`` (fixed control set) it is monotone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import Grid2D, MeasureCurve, NonFinite, TimeGrid, ValueField
from .model import (
    ModelParams,
    interaction_field,
    running_cost_field,
    terminal_cost_field,
)

logger = logging.getLogger(__name__)

SCHEMES = ("corrected", "bilinear")


@dataclass(frozen=True)
class ControlGrid:
    A_max: float
    n_r: int = 8
    n_theta: int = 16

    def __post_init__(self):
        if not self.A_max > 0:
            raise ValueError(f"A_max must be > 0, got {self.A_max}")
        if self.n_r < 4:
            raise ValueError("control.n_r must be >= 4")
        if self.n_theta < 8:
            raise ValueError("control.n_theta must be >= 8")

    def controls(self) -> np.ndarray:
        """Zero first, then rings of increasing radius, each swept by angle index."""
        out = [(0.0, 0.0)]
        for i in range(1, self.n_r + 1):
            rad = self.A_max * i / self.n_r
            for j in range(self.n_theta):
                th = 2.0 * math.pi * j / self.n_theta
                out.append((rad * math.cos(th), rad * math.sin(th)))
        return np.array(out)


@dataclass
class HjbSolution:
    value: ValueField
    c2_hat: np.ndarray
    drift: np.ndarray  # interaction field f_k, (K, n, n, 2)
    running: np.ndarray  # running cost g_k, (K, n, n)
    terminal: np.ndarray  # psi, (n, n)
    controls: ControlGrid
    grid: Grid2D
    tgrid: TimeGrid


def hamiltonian(p, f, g):
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    return 0.5 * np.sum(p * p, axis=-1) - np.sum(p * f, axis=-1) - g


def clamp_norm(a: np.ndarray, A_max: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    nrm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    scale = np.where(nrm > A_max, A_max / np.where(nrm > 0, nrm, 1.0), 1.0)
    return a * scale


def optimal_control_from_gradient(p, cg: ControlGrid) -> np.ndarray:
    """Feedback ``-p`` projected radially onto the disc of radius ``A_max``."""
    return clamp_norm(-np.asarray(p, dtype=float), cg.A_max)


def gradient_field(u_slice: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Central differences inside, second-order one-sided at the edges; shape (n, n, 2)."""
    gx = np.gradient(u_slice, grid.h, axis=0, edge_order=2)
    gy = np.gradient(u_slice, grid.h, axis=1, edge_order=2)
    return np.stack([gx, gy], axis=-1)


def semiconcavity_estimate(u_slice: np.ndarray, grid: Grid2D) -> float:
    """Largest second difference quotient over interior nodes along axes and diagonals."""
    u = u_slice
    n = u.shape[0]
    c = u[1:-1, 1:-1]
    best = -np.inf
    for a, b in ((1, 0), (0, 1), (1, 1), (1, -1)):
        plus = u[1 + a : n - 1 + a, 1 + b : n - 1 + b]
        minus = u[1 - a : n - 1 - a, 1 - b : n - 1 - b]
        q = (plus + minus - 2.0 * c) / ((a * a + b * b) * grid.h**2)
        best = max(best, float(q.max()))
    return best


def second_differences(u: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis second differences, copied outward at the edges."""
    dxx = np.empty_like(u)
    dyy = np.empty_like(u)
    dxx[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2
    dxx[0], dxx[-1] = dxx[1], dxx[-2]
    dyy[:, 1:-1] = (u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) / h**2
    dyy[:, 0], dyy[:, -1] = dyy[:, 1], dyy[:, -2]
    return dxx, dyy


@numba.njit(cache=True, inline="always")
def _locate(p, L, h, n):
    s = (p + L) / h - 0.5
    if s < 0.0:
        s = 0.0
    elif s > n - 1.0:
        s = n - 1.0
    i0 = int(math.floor(s))
    if i0 > n - 2:
        i0 = n - 2
    return i0, s - i0


@numba.njit(cache=True, inline="always")
def _lerp(f, i0, j0, tx, ty):
    f00 = f[i0, j0]
    a = f00 + tx * (f[i0 + 1, j0] - f00)
    f01 = f[i0, j0 + 1]
    b = f01 + tx * (f[i0 + 1, j0 + 1] - f01)
    return a + ty * (b - a)


@numba.njit(cache=True, inline="always")
def _sample(u, dxx, dyy, corrected, px, py, L, h, n):
    i0, tx = _locate(px, L, h, n)
    j0, ty = _locate(py, L, h, n)
    v = _lerp(u, i0, j0, tx, ty)
    if corrected:
        v -= 0.5 * h * h * (tx * (1.0 - tx) * _lerp(dxx, i0, j0, tx, ty) + ty * (1.0 - ty) * _lerp(dyy, i0, j0, tx, ty))
    return v


@numba.njit(cache=True, inline="always")
def _foot_value(u, dxx, dyy, corrected, x, y, ax, ay, fx, fy, g, dt, L, h, n, penalty):
    px = x + dt * (ax + fx)
    py = y + dt * (ay + fy)
    ex = 0.0
    if px > L:
        ex = px - L
        px = L
    elif px < -L:
        ex = -L - px
        px = -L
    ey = 0.0
    if py > L:
        ey = py - L
        py = L
    elif py < -L:
        ey = -L - py
        py = -L
    val = dt * (0.5 * (ax * ax + ay * ay) + g) + _sample(u, dxx, dyy, corrected, px, py, L, h, n)
    if ex > 0.0 or ey > 0.0:
        val += penalty * math.sqrt(ex * ex + ey * ey)
    return val


@numba.njit(cache=True, inline="always")
def _clamp(ax, ay, A_max):
    nrm = math.sqrt(ax * ax + ay * ay)
    if nrm > A_max:
        s = A_max / nrm
        return ax * s, ay * s
    return ax, ay


@numba.njit(cache=True, parallel=True)
def _sl_kernel(u, dxx, dyy, grad, f, g, centers, cands, dt, A_max, L, h, penalty, corrected, n_refine, out, amin):
    n = u.shape[0]
    nc = cands.shape[0]
    for i in numba.prange(n):
        x = centers[i]
        for j in range(n):
            y = centers[j]
            fx = f[i, j, 0]
            fy = f[i, j, 1]
            gg = g[i, j]
            best = np.inf
            bx = 0.0
            by = 0.0
            for c in range(nc):
                ax = cands[c, 0]
                ay = cands[c, 1]
                val = _foot_value(u, dxx, dyy, corrected, x, y, ax, ay, fx, fy, gg, dt, L, h, n, penalty)
                if val < best:
                    best = val
                    bx = ax
                    by = ay
            # gradient candidates: -Du_next(x), then -Du_next at the foot that one predicts
            ax, ay = _clamp(-grad[i, j, 0], -grad[i, j, 1], A_max)
            for rep in range(n_refine):
                val = _foot_value(u, dxx, dyy, corrected, x, y, ax, ay, fx, fy, gg, dt, L, h, n, penalty)
                if val < best or (val == best and ax * ax + ay * ay < bx * bx + by * by):
                    best = val
                    bx = ax
                    by = ay
                if rep == 0:
                    px = min(max(x + dt * (ax + fx), -L), L)
                    py = min(max(y + dt * (ay + fy), -L), L)
                    i0, tx = _locate(px, L, h, n)
                    j0, ty = _locate(py, L, h, n)
                    ax, ay = _clamp(-_lerp(grad[:, :, 0], i0, j0, tx, ty), -_lerp(grad[:, :, 1], i0, j0, tx, ty), A_max)
            out[i, j] = best
            amin[i, j, 0] = bx
            amin[i, j, 1] = by


def sl_step(
    u_next: np.ndarray,
    f_k: np.ndarray,
    g_k: np.ndarray,
    dt: float,
    cg: ControlGrid,
    grid: Grid2D,
    *,
    scheme: str = "corrected",
    exit_penalty: float = 10.0,
    refine: bool = True,
    return_controls: bool = False,
):
    """One backward dynamic-programming step on every node.

    Feet of characteristics that leave the box are pulled back onto it and
    charged ``exit_penalty`` per unit of distance outside. Ties go to the
    smallest control, then the smallest angle index. ``refine=False`` drops the
    gradient candidates, leaving a fixed control set (the only variant that is
    order preserving in ``u_next``).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    fmax = float(np.max(np.sqrt(np.sum(f_k * f_k, axis=-1)))) if f_k.size else 0.0
    if dt * (cg.A_max + fmax) > grid.L / 4:
        raise ValueError(
            f"time step too large: dt*(A_max+max|f|) = {dt * (cg.A_max + fmax):.3g} exceeds L/4 = {grid.L / 4:.3g}"
        )
    u_next = np.ascontiguousarray(u_next, dtype=float)
    dxx, dyy = second_differences(u_next, grid.h)
    grad = np.ascontiguousarray(gradient_field(u_next, grid))
    g_k = np.broadcast_to(np.asarray(g_k, dtype=float), u_next.shape)
    out = np.empty_like(u_next)
    amin = np.empty(u_next.shape + (2,))
    _sl_kernel(
        u_next, dxx, dyy, grad,
        np.ascontiguousarray(f_k, dtype=float), np.ascontiguousarray(g_k),
        grid.centers, cg.controls(), float(dt), float(cg.A_max), float(grid.L), float(grid.h),
        float(exit_penalty), scheme == "corrected", 2 if refine else 0, out, amin,
    )
    if not np.all(np.isfinite(out)):
        raise NonFinite("semi-Lagrangian step produced NaN/Inf (blow-up or box too small)")
    return (out, amin) if return_controls else out


def _max_norm(v: np.ndarray) -> float:
    return float(np.max(np.sqrt(np.sum(v * v, axis=-1)))) if v.size else 0.0


def estimate_A_max(psi: np.ndarray, g: np.ndarray, f: np.ndarray, grid: Grid2D, T: float) -> float:
    """Gronwall-style cap 2 (max|D psi| + T max|D g|) exp(T max|D f|) + 1."""
    dpsi = _max_norm(gradient_field(psi, grid))
    dg = max(_max_norm(gradient_field(gk, grid)) for gk in g)
    df = 0.0
    for fk in f:
        jac = np.concatenate([gradient_field(fk[..., c], grid) for c in range(2)], axis=-1)
        df = max(df, float(np.max(np.sqrt(np.sum(jac * jac, axis=-1)))))
    return 2.0 * (dpsi + T * dg) * math.exp(T * df) + 1.0


@dataclass(frozen=True)
class HjbOptions:
    scheme: str = "corrected"
    exit_penalty: float = 10.0
    A_max: float | None = None
    n_r: int = 8
    n_theta: int = 16
    refine: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"hjb.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.exit_penalty >= 0:
            raise ValueError("hjb.exit_penalty must be >= 0")
        if self.A_max is not None and not self.A_max > 0:
            raise ValueError("control.A_max must be > 0")


def model_fields(m: MeasureCurve, mp: ModelParams, drift_extra: np.ndarray | None = None):
    """Drift f_k, running cost g_k and terminal cost psi generated by a frozen curve."""
    grid = m.grid
    f = interaction_field(m.masses, mp.kernel, grid)
    if drift_extra is not None:
        f = f + drift_extra
    g = running_cost_field(m.masses, mp.cost, grid)
    psi = terminal_cost_field(m.masses[-1], mp.cost, grid)
    return f, g, psi


def solve_hjb_backward(
    m: MeasureCurve,
    mp: ModelParams,
    grid: Grid2D,
    tg: TimeGrid,
    cg: ControlGrid | None = None,
    *,
    options: HjbOptions = HjbOptions(),
    fields=None,
) -> HjbSolution:
    """March the value function from ``psi`` at T back to t = 0 against the frozen curve ``m``.

    ``fields`` may carry precomputed ``(f, g, psi)``; otherwise they are built
    from ``m``. Without an explicit control grid, ``A_max`` comes from
    :func:`estimate_A_max` unless ``options.A_max`` is set.
    """
    f, g, psi = fields if fields is not None else model_fields(m, mp)
    if cg is None:
        A_max = options.A_max if options.A_max is not None else estimate_A_max(psi, g, f, grid, tg.T)
        cg = ControlGrid(A_max, options.n_r, options.n_theta)
    K = tg.n_t + 1
    values = np.empty((K, grid.n, grid.n))
    values[-1] = psi
    for k in range(tg.n_t - 1, -1, -1):
        values[k] = sl_step(
            values[k + 1], f[k], g[k], tg.dt, cg, grid,
            scheme=options.scheme, exit_penalty=options.exit_penalty, refine=options.refine,
        )
    grads = np.stack([gradient_field(v, grid) for v in values])
    c2 = np.array([semiconcavity_estimate(v, grid) for v in values])
    return HjbSolution(ValueField(values, grads), c2, f, g, psi, cg, grid, tg)
