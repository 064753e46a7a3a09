import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdmfg.core import (
    DensityField,
    Grid2D,
    GridMismatch,
    MeasureCurve,
    NonFinite,
    OutOfDomain,
    ParticleCloud,
    TimeGrid,
    ValueField,
    deposit,
    interpolate_scalar,
    ring_mass,
)


def test_grid_geometry():
    g = Grid2D(2.0, 8)
    assert g.h == 0.5
    assert g.centers[0] == -1.75 and g.centers[-1] == 1.75
    X, Y = g.mesh()
    assert X[3, 5] == g.centers[3] and Y[3, 5] == g.centers[5]


@pytest.mark.parametrize("L,n", [(0.0, 8), (-1.0, 8), (1.0, 6), (1.0, 9)])
def test_grid_rejects_bad_parameters(L, n):
    with pytest.raises(ValueError):
        Grid2D(L, n)


def test_time_grid():
    tg = TimeGrid(1.0, 4)
    assert tg.dt == 0.25
    np.testing.assert_array_equal(tg.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_interpolate_constant():
    g = Grid2D(1.0, 8)
    f = np.full((8, 8), 3.25)
    assert interpolate_scalar(f, g, (0.31, -0.77)) == 3.25
    assert interpolate_scalar(f, g, (0.99, 0.99)) == 3.25


def test_interpolate_affine_exact():
    g = Grid2D(1.0, 16)
    X, Y = g.mesh()
    assert interpolate_scalar(2 * X - Y, g, (0.3, -0.2)) == pytest.approx(0.8, abs=1e-14)


def test_interpolate_quadratic_error_bound():
    g = Grid2D(1.0, 16)
    X, _ = g.mesh()
    a = g.centers[5]
    mid = a + g.h / 2
    v = interpolate_scalar(X**2, g, (mid, 0.1))
    assert v == pytest.approx(a**2 / 2 + (a + g.h) ** 2 / 2, abs=1e-14)
    assert v - mid**2 <= g.h**2 / 4 + 1e-12


def test_interpolate_clamps_within_one_cell_and_raises_beyond():
    g = Grid2D(1.0, 8)
    f = np.arange(64.0).reshape(8, 8)
    assert interpolate_scalar(f, g, (1.0 + 0.9 * g.h, 0.0)) == interpolate_scalar(f, g, (1.0, 0.0))
    with pytest.raises(OutOfDomain):
        interpolate_scalar(f, g, (1.0 + 1.1 * g.h, 0.0))


def test_deposit_at_cell_center():
    g = Grid2D(1.0, 8)
    rho = deposit(ParticleCloud([[g.centers[2], g.centers[5]]]), g)
    assert rho.mass[2, 5] == 1.0
    assert rho.mass.sum() == 1.0


def test_deposit_equidistant_from_four_centers():
    g = Grid2D(1.0, 8)
    x = (g.centers[2] + g.centers[3]) / 2
    y = (g.centers[5] + g.centers[6]) / 2
    rho = deposit(ParticleCloud([[x, y]]), g)
    np.testing.assert_allclose(rho.mass[2:4, 5:7], 0.25, atol=1e-15)
    assert rho.mass.sum() == pytest.approx(1.0, abs=1e-15)


def test_deposit_quarter_offset():
    g = Grid2D(1.0, 8)
    rho = deposit(ParticleCloud([[g.centers[3] + 0.25 * g.h, g.centers[4]]]), g)
    assert rho.mass[3, 4] == pytest.approx(0.75, abs=1e-15)
    assert rho.mass[4, 4] == pytest.approx(0.25, abs=1e-15)
    assert np.count_nonzero(rho.mass) == 2


def test_deposit_outside_raises():
    g = Grid2D(1.0, 8)
    with pytest.raises(OutOfDomain):
        deposit(ParticleCloud([[1.01, 0.0]]), g)


points = st.lists(
    st.tuples(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0)), min_size=1, max_size=60
)


@given(points)
def test_deposit_conserves_mass(pts):
    g = Grid2D(1.0, 8)
    rho = deposit(ParticleCloud(pts), g)
    assert abs(rho.mass.sum() - 1.0) <= len(pts) * 1e-15 + 1e-15
    assert np.all(rho.mass >= 0)


@given(points, st.integers(0, 2**32 - 1))
def test_deposit_interpolate_adjoint(pts, seed):
    g = Grid2D(1.0, 8)
    phi = np.random.default_rng(seed).normal(size=(8, 8))
    cloud = ParticleCloud(pts)
    lhs = np.sum(phi * deposit(cloud, g).mass)
    rhs = np.sum(interpolate_scalar(phi, g, cloud.positions)) * cloud.weight
    assert lhs == pytest.approx(rhs, abs=1e-12)


dyadic = st.lists(st.tuples(st.integers(-512, 512), st.integers(-512, 512)), min_size=1, max_size=40)


@given(dyadic, st.integers(-3, 3), st.integers(-3, 3))
def test_deposit_translation_equivariance(pts, a, b):
    # dyadic positions and h = 1/4 keep every operation exact in floating point
    g = Grid2D(2.0, 16)
    p = np.asarray(pts, dtype=float) / 1024.0
    m0 = deposit(ParticleCloud(p), g).mass
    m1 = deposit(ParticleCloud(p + np.array([a, b]) * g.h), g).mass
    np.testing.assert_array_equal(np.roll(m0, (a, b), axis=(0, 1)), m1)


def test_density_scales_and_validation():
    g = Grid2D(1.0, 8)
    m = np.zeros((8, 8))
    m[0, 0] = 1.0
    rho = DensityField(g, m, M_tot=50.0)
    rho.validate()
    assert rho.density[0, 0] == 1.0 / g.h**2
    assert rho.physical_density[0, 0] == 50.0 / g.h**2
    with pytest.raises(ValueError):
        DensityField(g, m * 0.5).validate()
    with pytest.raises(GridMismatch):
        DensityField(g, np.zeros((4, 4)))


def test_measure_curve_shapes():
    g, tg = Grid2D(1.0, 8), TimeGrid(1.0, 4)
    rho = deposit(ParticleCloud([[0.0, 0.0]]), g)
    c = MeasureCurve.constant(rho, tg)
    assert c.masses.shape == (5, 8, 8)
    assert np.all(c.mass_errors() <= 1e-15)
    with pytest.raises(GridMismatch):
        MeasureCurve(g, tg, np.zeros((4, 8, 8)))


def test_value_field_rejects_nan():
    with pytest.raises(NonFinite):
        ValueField(np.array([[[np.nan]]]), np.zeros((1, 1, 1, 2)))


def test_ring_mass_is_exact_zero_for_interior_mass():
    g = Grid2D(1.0, 16)
    assert ring_mass(deposit(ParticleCloud(np.random.default_rng(0).uniform(-0.5, 0.5, (100, 2))), g).mass) == 0.0
    m = np.zeros((16, 16))
    m[0, 7] = 1.0
    assert ring_mass(m) == 1.0
