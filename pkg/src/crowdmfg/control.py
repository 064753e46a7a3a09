"""Trajectory-level checks of a solved pair: optimal paths, costs, adjoint residuals
and a finite approximate-Nash probe against open-loop deviations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MFGError, MeasureCurve, OutOfDomain, _lerp2, cell_coords, _clamp_to_box
from .hjb import HjbSolution, clamp_norm, gradient_field
from .model import ModelParams, terminal_shape


class TooShort(MFGError):
    pass


@dataclass
class Trajectory:
    """States and controls at time nodes ``k0 .. n_t``.

    ``mid_controls[k]`` is the control used at the midpoint stage of step k;
    together with ``controls`` it replays the path open-loop.
    """

    k0: int
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    mid_controls: np.ndarray
    cost: float = float("nan")
    raw_controls: np.ndarray | None = field(default=None, repr=False)


def _interp(field_, grid, pts):
    pts = _clamp_to_box(grid, pts, grid.h)
    return _lerp2(field_, *cell_coords(grid, pts))


def _check_inside(x, grid):
    outside = np.max(np.abs(x), axis=-1) > grid.L
    if np.any(outside):
        raise OutOfDomain(f"trajectory left the box at {x[np.argmax(outside)]}")


def simulate_trajectories(hjb: HjbSolution, mp: ModelParams, k0: int, x0) -> list[Trajectory]:
    """Feedback paths y' = -Du + f from several starts, integrated like the particle cloud."""
    grid, tg = hjb.grid, hjb.tgrid
    G, F = hjb.value.gradients, hjb.drift
    x = np.array(x0, dtype=float).reshape(-1, 2)
    _check_inside(x, grid)
    K = tg.n_t + 1 - k0
    states = np.empty((K, len(x), 2))
    raw = np.empty((K, len(x), 2))
    mids = np.empty((max(K - 1, 0), len(x), 2))
    states[0] = x
    for s in range(K - 1):
        k = k0 + s
        du0, f0 = _interp(G[k], grid, x), _interp(F[k], grid, x)
        raw[s] = -du0
        k1 = -du0 + f0
        xm = x + (0.5 * tg.dt) * k1
        du_m = 0.5 * (_interp(G[k], grid, xm) + _interp(G[k + 1], grid, xm))
        f_m = 0.5 * (_interp(F[k], grid, xm) + _interp(F[k + 1], grid, xm))
        mids[s] = -du_m
        x = x + tg.dt * (-du_m + f_m)
        _check_inside(x, grid)
        states[s + 1] = x
    raw[K - 1] = -_interp(G[tg.n_t], grid, x)
    ctrl = clamp_norm(raw, hjb.controls.A_max)
    times = tg.nodes[k0:]
    out = []
    for p in range(len(x)):
        tr = Trajectory(k0, times, states[:, p], ctrl[:, p], mids[:, p], raw_controls=raw[:, p])
        out.append(tr)
    costs = path_costs(states, ctrl, hjb, mp, k0)
    for tr, c in zip(out, costs):
        tr.cost = float(c)
    return out


def simulate_trajectory(hjb: HjbSolution, m: MeasureCurve | None, mp: ModelParams, t0: int, x0) -> Trajectory:
    return simulate_trajectories(hjb, mp, t0, np.asarray(x0, dtype=float)[None])[0]


def path_costs(states, controls, hjb: HjbSolution, mp: ModelParams, k0: int) -> np.ndarray:
    """Trapezoidal running cost plus terminal cost for paths ``(K, P, 2)``."""
    grid, tg = hjb.grid, hjb.tgrid
    K = states.shape[0]
    run = np.empty(states.shape[:2])
    for s in range(K):
        ell = _interp(hjb.running[k0 + s], grid, states[s])
        run[s] = 0.5 * np.sum(controls[s] ** 2, axis=-1) + ell
    if K > 1:
        integral = tg.dt * (0.5 * run[0] + run[1:-1].sum(axis=0) + 0.5 * run[-1])
    else:
        integral = np.zeros(states.shape[1])
    return integral + terminal_values(states[-1], hjb, mp)


def terminal_values(x, hjb: HjbSolution, mp: ModelParams) -> np.ndarray:
    """Closed-form terminal shape plus the interpolated congestion part, if any."""
    val = terminal_shape(x, mp.cost)
    if mp.cost.c_cong_T > 0:
        X, Y = hjb.grid.mesh()
        cong = hjb.terminal - terminal_shape(np.stack([X, Y], -1), mp.cost)
        val = val + _interp(cong, hjb.grid, x)
    return val


def evaluate_cost(traj: Trajectory, hjb: HjbSolution, mp: ModelParams) -> float:
    """Trapezoidal quadrature of |a|^2/2 + l along the path, plus the terminal cost."""
    return float(path_costs(traj.states[:, None], traj.controls[:, None], hjb, mp, traj.k0)[0])


def pontryagin_residual(traj: Trajectory, hjb: HjbSolution, mp: ModelParams) -> tuple[float, float]:
    """Residuals of the adjoint system a' = Dg - a.Df, a(T) = -D psi along a path.

    ``a'`` uses central differences in time; Dg, Df and D psi are finite
    differences of the nodal fields the solver used. The ODE residual is the
    discrete L2 norm in time over interior nodes.
    """
    K = len(traj.times)
    if K < 3:
        raise TooShort("pontryagin_residual needs at least 3 time nodes")
    grid, dt = hjb.grid, hjb.tgrid.dt
    a = traj.controls
    res = np.empty((K - 2, 2))
    for s in range(1, K - 1):
        k = traj.k0 + s
        y = traj.states[s][None]
        dg = _interp(gradient_field(hjb.running[k], grid), grid, y)[0]
        jac = np.stack([_interp(gradient_field(hjb.drift[k][..., c], grid), grid, y)[0] for c in range(2)])
        # (a . Df)_j = sum_i a_i d_j f_i
        adf = a[s] @ jac
        adot = (a[s + 1] - a[s - 1]) / (2.0 * dt)
        res[s - 1] = adot - (dg - adf)
    ode = float(np.sqrt(dt * np.sum(res * res)))
    dpsi = _interp(gradient_field(hjb.terminal, grid), grid, traj.states[-1][None])[0]
    term = float(np.linalg.norm(a[-1] + dpsi))
    return ode, term


@dataclass
class OpenLoop:
    """Open-loop control schedule: values at time nodes and at step midpoints."""

    nodes: np.ndarray  # (K, 2)
    mids: np.ndarray  # (K-1, 2)

    @classmethod
    def constant(cls, a, n_steps: int) -> OpenLoop:
        a = np.asarray(a, dtype=float)
        return cls(np.tile(a, (n_steps + 1, 1)), np.tile(a, (n_steps, 1)))

    @classmethod
    def replay(cls, traj: Trajectory) -> OpenLoop:
        return cls(traj.raw_controls.copy(), traj.mid_controls.copy())


def constant_lattice(A_max: float, per_axis: int = 9) -> np.ndarray:
    v = np.linspace(-A_max, A_max, per_axis)
    A, B = np.meshgrid(v, v, indexing="ij")
    return np.stack([A.ravel(), B.ravel()], axis=1)


def open_loop_costs(hjb: HjbSolution, mp: ModelParams, k0: int, x0, schedules: list[OpenLoop]) -> np.ndarray:
    """Cost of y' = a(t) + f(t, y) from ``x0`` for each schedule, against the frozen curve.

    Paths that leave the box are inadmissible and get cost +inf.
    """
    grid, tg = hjb.grid, hjb.tgrid
    F = hjb.drift
    P = len(schedules)
    if P == 0:
        return np.zeros(0)
    nodes = np.stack([s.nodes for s in schedules], axis=1)  # (K, P, 2)
    mids = np.stack([s.mids for s in schedules], axis=1)
    K = tg.n_t + 1 - k0
    x = np.tile(np.asarray(x0, dtype=float), (P, 1))
    states = np.empty((K, P, 2))
    states[0] = x
    alive = np.ones(P, dtype=bool)
    L = grid.L
    for s in range(K - 1):
        k = k0 + s
        k1 = nodes[s] + _interp(F[k], grid, x)
        xm = np.clip(x + (0.5 * tg.dt) * k1, -L, L)
        f_m = 0.5 * (_interp(F[k], grid, xm) + _interp(F[k + 1], grid, xm))
        x = x + tg.dt * (mids[s] + f_m)
        alive &= np.max(np.abs(x), axis=1) <= L
        x = np.clip(x, -L, L)
        states[s + 1] = x
    costs = path_costs(states, nodes, hjb, mp, k0)
    return np.where(alive, costs, np.inf)


@dataclass
class NashGap:
    max_gap: float
    mean_gap: float
    gaps: np.ndarray
    feedback_costs: np.ndarray
    best_deviation_costs: np.ndarray
    tested: bool = True

    def within(self, eps_abs: float, eps_rel: float) -> bool:
        if not self.tested:
            return True
        return bool(np.all(self.gaps <= eps_rel * np.abs(self.feedback_costs) + eps_abs))


def nash_gap(hjb: HjbSolution, mp: ModelParams, starts, deviations=None, *, k0: int = 0) -> NashGap:
    """gap(x) = C_feedback(x) - min over deviations of C_dev(x), for each start.

    ``deviations`` is a list of :class:`OpenLoop` schedules, an array of constant
    controls, or ``None`` for the 9x9 constant lattice on [-A_max, A_max]^2.
    A callable receiving the feedback trajectory may return per-start schedules.
    """
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    trajs = simulate_trajectories(hjb, mp, k0, starts)
    n_steps = hjb.tgrid.n_t - k0
    fb = np.array([t.cost for t in trajs])
    best = np.empty(len(starts))
    for p, (x, tr) in enumerate(zip(starts, trajs)):
        if deviations is None:
            sched = [OpenLoop.constant(a, n_steps) for a in constant_lattice(hjb.controls.A_max)]
        elif callable(deviations):
            sched = list(deviations(tr))
        elif isinstance(deviations, np.ndarray) or (deviations and not isinstance(deviations[0], OpenLoop)):
            sched = [OpenLoop.constant(a, n_steps) for a in np.asarray(deviations, dtype=float).reshape(-1, 2)]
        else:
            sched = list(deviations)
        if not sched:
            return NashGap(-np.inf, -np.inf, np.full(len(starts), -np.inf), fb, np.full(len(starts), np.inf), tested=False)
        best[p] = np.min(open_loop_costs(hjb, mp, k0, x, sched))
    gaps = fb - best
    return NashGap(float(gaps.max()), float(gaps.mean()), gaps, fb, best)
