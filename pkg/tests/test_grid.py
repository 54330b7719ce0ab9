import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hcpe import grid as g
from hcpe.errors import DegeneracyError, GridMismatchError
from hcpe.grid import Grid, read_field, write_field

# 1 - exp(-1), closed form (tests/oracles/compute_oracles.py)
ONE_MINUS_INV_E = 0.63212055882855768

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_cumulative_integral_of_constant_is_exact():
    z = np.linspace(0, 1, 17)
    np.testing.assert_allclose(g.cumulative_integral(np.ones(17)), z, atol=1e-15)


def test_cumulative_integral_of_linear_matches_antiderivative():
    z = np.linspace(0, 1, 65)
    F = g.cumulative_integral(2 * z)
    assert abs(F[-1] - 1.0) <= 1e-3
    np.testing.assert_allclose(F, z**2, atol=1e-14)


def test_cumulative_integral_of_exponential_converges_at_second_order():
    errs = []
    for nz in (33, 65, 129):
        z = np.linspace(0, 1, nz)
        errs.append(abs(g.cumulative_integral(np.exp(-z))[-1] - ONE_MINUS_INV_E))
    assert errs[-1] < 1e-4
    assert 3.6 < errs[0] / errs[1] < 4.4
    assert 3.6 < errs[1] / errs[2] < 4.4


def test_vertical_mean_examples():
    z = np.linspace(0, 1, 129)
    assert g.vertical_mean(np.full(129, 3.5)) == pytest.approx(3.5, abs=1e-14)
    assert g.vertical_mean(z) == pytest.approx(0.5, abs=1e-14)
    assert g.vertical_mean(np.exp(-z)) == pytest.approx(ONE_MINUS_INV_E, abs=1e-5)


def test_cumulative_matrix_agrees_with_function(rng):
    f = rng.standard_normal(11)
    np.testing.assert_allclose(g.cumulative_matrix(11) @ f, g.cumulative_integral(f), atol=1e-14)


def test_dzz_matrix_agrees_with_function(rng):
    f = rng.standard_normal(11)
    np.testing.assert_allclose(g.dzz_matrix(11) @ f, g.dzz(f), rtol=1e-12, atol=1e-10)


def test_dz_neumann_zeroes_endpoints_and_is_second_order():
    errs = []
    for nz in (17, 33, 65):
        z = np.linspace(0, 1, nz)
        d = g.dz(np.cos(np.pi * z), neumann=True)
        assert d[0] == 0.0 and d[-1] == 0.0
        errs.append(np.max(np.abs(d + np.pi * np.sin(np.pi * z))))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_dzz_of_neumann_cosine_is_second_order():
    errs = []
    for nz in (17, 33, 65):
        z = np.linspace(0, 1, nz)
        errs.append(np.max(np.abs(g.dzz(np.cos(np.pi * z)) + np.pi**2 * np.cos(np.pi * z))))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


@settings(max_examples=40, deadline=None)
@given(arrays(float, 9, elements=finite))
def test_face_gradient_squared_closes_the_dissipation_budget(f):
    lhs = g.vertical_mean(g.face_gradient_squared(f))
    rhs = -g.vertical_mean(f * g.dzz(f))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-8)


def test_boundary_slope_of_cosine_vanishes():
    z = np.linspace(0, 1, 65)
    bottom, top = g.boundary_slope(np.cos(np.pi * z))
    assert abs(bottom) < 1e-3 and abs(top) < 1e-3


def test_spectral_x_derivative_of_sine():
    grid = Grid(16, 8, 5)
    x, _, _ = grid.mesh
    np.testing.assert_allclose(grid.dx(np.sin(2 * np.pi * x)), 2 * np.pi * np.cos(2 * np.pi * x), atol=1e-10)


def test_derivatives_of_constants_vanish(small_grid):
    c = np.full(small_grid.shape3, 2.0)
    assert np.max(np.abs(small_grid.grad_h(c))) < 1e-14
    assert np.max(np.abs(small_grid.laplacian3(c))) < 1e-12
    assert np.max(np.abs(small_grid.dz(c))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_div_of_grad_equals_laplacian_exactly(seed):
    grid = Grid(8, 6, 5)
    f = np.random.default_rng(seed).standard_normal(grid.shape3)
    np.testing.assert_allclose(grid.div_h(grid.grad_h(f)), grid.laplacian_h(f), atol=1e-10)


def test_hessian_is_symmetric_and_traces_to_laplacian(small_grid, rng):
    f = rng.standard_normal(small_grid.shape2)
    H = small_grid.hessian_h(f)
    np.testing.assert_allclose(H[0, 1], H[1, 0], atol=1e-12)
    np.testing.assert_allclose(H[0, 0] + H[1, 1], small_grid.laplacian_h(f), atol=1e-10)


def test_interpolation_is_exact_at_nodes(small_grid, rng):
    f = rng.standard_normal(small_grid.shape3)
    xx, yy = small_grid.mesh2
    np.testing.assert_allclose(small_grid.interpolate_h(f, xx, yy), f, atol=1e-12)


def test_interpolation_of_sine_at_quarter_point():
    grid = Grid(16, 16, 3)
    x2, _ = grid.mesh2
    val = grid.interpolate_h(np.sin(2 * np.pi * x2), np.array([0.25]), np.array([0.1]))
    assert val[0] == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(-4, 4), st.integers(-4, 4))
def test_interpolation_is_periodic_and_exact_for_band_limited_fields(px, py, sx, sy):
    grid = Grid(12, 10, 3)
    x2, y2 = grid.mesh2
    f = np.cos(2 * np.pi * (2 * x2 - y2)) + 0.5 * np.sin(2 * np.pi * 3 * y2)
    exact = np.cos(2 * np.pi * (2 * px - py)) + 0.5 * np.sin(2 * np.pi * 3 * py)
    a = grid.interpolate_h(f, np.array([px]), np.array([py]))
    b = grid.interpolate_h(f, np.array([px + sx]), np.array([py + sy]))
    assert a[0] == pytest.approx(exact, abs=1e-10)
    assert a[0] == pytest.approx(b[0], abs=1e-10)


def test_interpolation_keeps_component_axes(small_grid, rng):
    v = rng.standard_normal((2,) + small_grid.shape3)
    p = np.zeros((3,))
    assert small_grid.interpolate_h(v, p, p).shape == (2, 3, small_grid.nz)


def test_sobolev_norm_of_single_mode():
    grid = Grid(16, 16, 3)
    x2, _ = grid.mesh2
    f = np.sin(2 * np.pi * x2)
    base = grid.l2_norm(f)
    assert base == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert grid.sobolev_norm(f, 2) == pytest.approx((1 + 4 * np.pi**2) * base, rel=1e-12)


def test_integrate_constant_is_volume(small_grid):
    assert small_grid.integrate(np.full(small_grid.shape3, 2.0)) == pytest.approx(2.0)


def test_dealias_filter_removes_high_modes():
    grid = Grid(12, 12, 3, dealias=True)
    x2, _ = grid.mesh2
    low, high = np.cos(2 * np.pi * x2), np.cos(2 * np.pi * 5 * x2)
    np.testing.assert_allclose(grid.dealias_filter(low + high), low, atol=1e-12)
    assert Grid(12, 12, 3).dealias_filter(high) is high


@pytest.mark.parametrize("args", [(7, 8, 5), (8, 2, 5), (8, 8, 2)])
def test_invalid_grids_are_rejected(args):
    with pytest.raises(GridMismatchError):
        Grid(*args)


def test_shape_checks(small_grid):
    with pytest.raises(GridMismatchError):
        small_grid.check3(np.zeros((8, 8, 5)))
    with pytest.raises(GridMismatchError):
        small_grid.dzz(np.zeros((8, 8, 4)))


def test_divide_guards_small_denominators():
    with pytest.raises(DegeneracyError):
        g.divide(1.0, np.array([1.0, 1e-14]))
    assert g.divide(2.0, 4.0) == 0.5


def test_field_dump_round_trip(tmp_path, small_grid, rng):
    f = rng.standard_normal((2,) + small_grid.shape3)
    path = tmp_path / "v.bin"
    write_field(path, f, "v", 0.25, small_grid)
    header, back = read_field(path)
    assert header["name"] == "v" and header["time"] == 0.25 and header["nz"] == small_grid.nz
    np.testing.assert_array_equal(back, f)
