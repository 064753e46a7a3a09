import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import lq_model, lq_solution, uniform_curve
from crowdmfg.core import Grid2D, TimeGrid
from crowdmfg.hjb import (
    ControlGrid,
    HjbOptions,
    estimate_A_max,
    gradient_field,
    hamiltonian,
    optimal_control_from_gradient,
    semiconcavity_estimate,
    sl_step,
    solve_hjb_backward,
)
from crowdmfg.model import CostParams, KernelParams, ModelParams

G16 = Grid2D(2.0, 16)
CG = ControlGrid(4.0)


def test_hamiltonian_examples():
    assert hamiltonian((0.0, 0.0), (3.0, -1.0), 0.7) == -0.7
    assert hamiltonian((1.0, 0.0), (0.0, 0.0), 0.0) == 0.5
    assert hamiltonian((1.0, 1.0), (1.0, 0.0), 0.1) == pytest.approx(-0.1, abs=1e-15)


def test_optimal_control_examples():
    np.testing.assert_array_equal(optimal_control_from_gradient((0.0, 0.0), ControlGrid(10.0)), [0.0, 0.0])
    np.testing.assert_array_equal(optimal_control_from_gradient((2.0, -1.0), ControlGrid(10.0)), [-2.0, 1.0])
    np.testing.assert_array_equal(optimal_control_from_gradient((10.0, 0.0), ControlGrid(4.0)), [-4.0, 0.0])


def test_control_grid():
    c = ControlGrid(2.0, n_r=4, n_theta=8).controls()
    assert len(c) == 1 + 4 * 8
    np.testing.assert_array_equal(c[0], [0.0, 0.0])
    assert np.max(np.linalg.norm(c, axis=1)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        ControlGrid(0.0)
    with pytest.raises(ValueError):
        ControlGrid(1.0, n_r=3)
    with pytest.raises(ValueError):
        ControlGrid(1.0, n_theta=4)


def zeros_f(grid):
    return np.zeros((grid.n, grid.n, 2))


def test_sl_step_constant():
    u = np.full((16, 16), 2.5)
    out, a = sl_step(u, zeros_f(G16), 0.3, 0.1, CG, G16, return_controls=True)
    np.testing.assert_allclose(out, 2.5 + 0.1 * 0.3, rtol=0, atol=1e-15)
    assert not np.any(a)


@pytest.mark.parametrize("scheme", ["corrected", "bilinear"])
def test_sl_step_affine(scheme):
    X, _ = G16.mesh()
    dt = 0.05
    out = sl_step(X, zeros_f(G16), 0.0, dt, CG, G16, scheme=scheme)
    inner = slice(2, -2)
    np.testing.assert_allclose(out[inner, inner], (X - dt / 2)[inner, inner], atol=1e-13)


def test_sl_step_symmetric_bowl_argmin_zero():
    X, Y = G16.mesh()
    c = G16.centers[7]
    u = (X - c) ** 2 + (Y - c) ** 2
    _, a = sl_step(u, zeros_f(G16), 0.0, 0.05, CG, G16, return_controls=True)
    np.testing.assert_array_equal(a[7, 7], [0.0, 0.0])


def test_sl_step_rejects_large_step():
    with pytest.raises(ValueError, match="time step too large"):
        sl_step(np.zeros((16, 16)), zeros_f(G16), 0.0, 0.2, CG, G16)


def test_gradient_field_examples():
    X, Y = G16.mesh()
    assert not np.any(gradient_field(np.full((16, 16), 3.0), G16))
    g = gradient_field(2 * X - Y, G16)
    np.testing.assert_allclose(g[..., 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(g[..., 1], -1.0, atol=1e-12)
    g = gradient_field(0.5 * (X**2 + Y**2), G16)
    np.testing.assert_allclose(g[1:-1, 1:-1, 0], X[1:-1, 1:-1], atol=1e-13)
    np.testing.assert_allclose(g[1:-1, 1:-1, 1], Y[1:-1, 1:-1], atol=1e-13)


def test_semiconcavity_examples():
    X, Y = G16.mesh()
    assert semiconcavity_estimate(2 * X - Y + 1, G16) == pytest.approx(0.0, abs=1e-12)
    assert semiconcavity_estimate(0.5 * 3.0 * (X**2 + Y**2), G16) == pytest.approx(3.0, abs=1e-12)
    assert semiconcavity_estimate(-(X**2 + Y**2), G16) == pytest.approx(-2.0, abs=1e-12)


def constant_model(h0=0.7, l0=0.2):
    return ModelParams(KernelParams(kappa=0.0), CostParams(eps_run=l0, terminal="constant", c_T=h0))


def test_solve_constant_data_exact():
    tg = TimeGrid(1.0, 10)
    sol = solve_hjb_backward(uniform_curve(G16, tg), constant_model(), G16, tg)
    for k, t in enumerate(tg.nodes):
        np.testing.assert_allclose(sol.value.values[k], 0.7 + 0.2 * (1.0 - t), rtol=0, atol=1e-14)
    np.testing.assert_array_equal(sol.value.values[-1], sol.terminal)


def test_running_cost_shift():
    tg = TimeGrid(1.0, 20)
    m = uniform_curve(G16, tg)
    base = solve_hjb_backward(m, lq_model(0.1), G16, tg, options=HjbOptions(A_max=6.0))
    shift = solve_hjb_backward(m, lq_model(0.35), G16, tg, options=HjbOptions(A_max=6.0))
    for k, t in enumerate(tg.nodes):
        np.testing.assert_allclose(shift.value.values[k], base.value.values[k] + 0.25 * (1.0 - t), rtol=0, atol=1e-9)
    np.testing.assert_allclose(shift.value.gradients, base.value.gradients, rtol=0, atol=1e-9)


def test_terminal_shift():
    tg = TimeGrid(1.0, 20)
    m = uniform_curve(G16, tg)
    mp = lq_model()
    f, g, psi = np.zeros((21, 16, 16, 2)), np.full((21, 16, 16), 0.1), 0.5 * (G16.mesh()[0] ** 2 + G16.mesh()[1] ** 2)
    opts = HjbOptions(A_max=6.0)
    a = solve_hjb_backward(m, mp, G16, tg, options=opts, fields=(f, g, psi))
    b = solve_hjb_backward(m, mp, G16, tg, options=opts, fields=(f, g, psi + 1.5))
    np.testing.assert_allclose(b.value.values, a.value.values + 1.5, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.value.gradients, a.value.gradients, rtol=0, atol=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_monotone_in_terminal_data(seed):
    # only plain bilinear interpolation over a fixed control set preserves order
    rng = np.random.default_rng(seed)
    tg = TimeGrid(0.5, 10)
    psi1 = rng.normal(size=(16, 16))
    psi2 = psi1 + rng.random((16, 16))
    f = np.clip(rng.normal(scale=0.5, size=(11, 16, 16, 2)), -1.0, 1.0)
    g = rng.random((11, 16, 16))
    m = uniform_curve(G16, tg)
    opts = HjbOptions(scheme="bilinear", A_max=3.0, refine=False)
    u1 = solve_hjb_backward(m, lq_model(), G16, tg, options=opts, fields=(f, g, psi1)).value.values
    u2 = solve_hjb_backward(m, lq_model(), G16, tg, options=opts, fields=(f, g, psi2)).value.values
    assert np.all(u1 <= u2 + 1e-12)


def test_dpp_step_reproduces_slice(lq64):
    tg, grid = lq64.tgrid, lq64.grid
    for k in (0, 17, tg.n_t - 1):
        again = sl_step(lq64.value.values[k + 1], lq64.drift[k], lq64.running[k], tg.dt, lq64.controls, grid)
        np.testing.assert_array_equal(again, lq64.value.values[k])


def lq_exact(grid, t, T=1.0, eps=0.1):
    X, Y = grid.mesh()
    return (X**2 + Y**2) / (2 * (1 + T - t)) + eps * (T - t)


def max_rel_err(sol):
    X, Y = sol.grid.mesh()
    probe = X**2 + Y**2 <= 1.0
    ex = lq_exact(sol.grid, 0.0)
    return np.max(np.abs(sol.value.values[0] - ex)[probe] / ex[probe])


def test_lq_value_accuracy(lq128):
    assert max_rel_err(lq128) <= 0.02


def test_lq_semiconcavity(lq128):
    for k, t in enumerate(lq128.tgrid.nodes):
        assert abs(lq128.c2_hat[k] - 1.0 / (2.0 - t)) <= 5e-3


def test_lq_refinement(lq64, lq128):
    assert max_rel_err(lq64) / max_rel_err(lq128) >= 1.5


def test_plain_bilinear_scheme_is_first_order_on_lq():
    e1 = max_rel_err(lq_solution(32, 25, scheme="bilinear"))
    e2 = max_rel_err(lq_solution(64, 50, scheme="bilinear"))
    assert 1.5 <= e1 / e2 <= 3.0


def test_estimate_A_max_formula():
    X, Y = G16.mesh()
    psi = 0.5 * (X**2 + Y**2)
    g = np.zeros((3, 16, 16))
    f = np.zeros((3, 16, 16, 2))
    dpsi = np.max(np.linalg.norm(gradient_field(psi, G16), axis=-1))
    assert estimate_A_max(psi, g, f, G16, 1.0) == pytest.approx(2 * dpsi + 1)
    f[1, ..., 0] = 0.5 * X
    assert estimate_A_max(psi, g, f, G16, 1.0) == pytest.approx((2 * dpsi) * math.exp(0.5) + 1)
