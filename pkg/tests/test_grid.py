import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenell.grid import (
    GridError,
    ScalarField,
    fd_gradient,
    fd_hessian,
    fd_weights,
    interpolate,
    interpolate_many,
    make_grid,
    read_field_csv,
    read_grid_json,
    write_field_csv,
    write_grid_json,
)


def test_uniform_normal_levels():
    g = make_grid(2, 4, 4, 1.0)
    np.testing.assert_allclose(g.normal_coords, [0, 0.25, 0.5, 0.75, 1], atol=0, rtol=0)


def test_quadratic_grading():
    g = make_grid(2, 4, 4, 2.0)
    np.testing.assert_allclose(g.normal_coords, [0, 0.0625, 0.25, 0.5625, 1], rtol=0, atol=1e-15)


@pytest.mark.parametrize("args", [(2, 4, 0, 1.0), (2, 2, 8, 1.0), (4, 8, 8, 1.0), (2, 8, 8, 0.5)])
def test_rejects_bad_parameters(args):
    with pytest.raises(GridError):
        make_grid(*args)


@settings(max_examples=40, deadline=None)
@given(n=st.sampled_from([2, 3]), N=st.integers(4, 12), M=st.integers(4, 40), gamma=st.floats(1.0, 4.0))
def test_grid_invariants(n, N, M, gamma):
    g = make_grid(n, N, M, gamma)
    for axis in g.axes:
        assert np.all(np.diff(axis) > 0)
    assert g.normal_coords[0] == 0 and g.normal_coords[-1] == 1
    assert g.n_nodes == (N + 1) ** (n - 1) * (M + 1)
    assert g.points().shape == (g.n_nodes, n)


def test_uniform_spacing_for_gamma_one():
    g = make_grid(2, 8, 37, 1.0)
    h = np.diff(g.normal_coords)
    assert np.max(np.abs(h - 1 / 37)) < 1e-12


def test_fd_weights_classic_central():
    np.testing.assert_allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0, 2), [1, -2, 1], atol=1e-14)
    np.testing.assert_allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0, 1), [-0.5, 0, 0.5], atol=1e-14)


def test_gradient_of_constant_vanishes():
    g = make_grid(2, 8, 16, 2.0)
    for comp in fd_gradient(ScalarField.constant(g, 7.0)):
        assert np.max(np.abs(comp.values)) < 1e-10


def test_gradient_of_t_on_uniform_mesh():
    g = make_grid(2, 8, 16, 1.0)
    u = ScalarField.from_function(g, lambda x, t: t + 0 * x)
    assert np.max(np.abs(fd_gradient(u)[-1].values - 1)) < 1e-12


def test_gradient_of_t_squared_on_graded_mesh():
    g = make_grid(2, 8, 32, 2.0)
    t = g.mesh()[-1]
    u = ScalarField.from_function(g, lambda x, t: t**2 + 0 * x)
    assert np.max(np.abs(fd_gradient(u)[-1].values - 2 * t)) < 1e-10


def test_hessian_examples():
    g = make_grid(2, 8, 16, 1.0)
    bilinear = fd_hessian(ScalarField.from_function(g, lambda x, t: x * t))
    assert np.max(np.abs(bilinear[0][1].values - 1)) < 1e-10
    for row in fd_hessian(ScalarField.constant(g, 3.0)):
        for entry in row:
            assert np.max(np.abs(entry.values)) < 1e-10
    tt = fd_hessian(ScalarField.from_function(make_grid(2, 8, 16, 2.0), lambda x, t: t**2 + 0 * x))
    assert np.max(np.abs(tt[1][1].values - 2)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(
    coef=st.lists(st.floats(-3, 3), min_size=10, max_size=10),
    gamma=st.floats(1.0, 3.0),
)
def test_quadratics_reproduced_exactly_3d(coef, gamma):
    g = make_grid(3, 6, 10, gamma)
    x, y, t = g.mesh()
    c = coef
    u = c[0] + c[1] * x + c[2] * y + c[3] * t + c[4] * x * x + c[5] * y * y + c[6] * t * t \
        + c[7] * x * y + c[8] * x * t + c[9] * y * t
    grad = [c[1] + 2 * c[4] * x + c[7] * y + c[8] * t,
            c[2] + 2 * c[5] * y + c[7] * x + c[9] * t,
            c[3] + 2 * c[6] * t + c[8] * x + c[9] * y]
    hess = [[2 * c[4], c[7], c[8]], [c[7], 2 * c[5], c[9]], [c[8], c[9], 2 * c[6]]]
    f = ScalarField(g, u)
    for got, want in zip(fd_gradient(f), grad):
        assert np.max(np.abs(got.values - want)) < 1e-9
    H = fd_hessian(f)
    for i in range(3):
        for j in range(3):
            assert np.max(np.abs(H[i][j].values - hess[i][j])) < 1e-9


def _interior_stencil_error(M):
    g = make_grid(2, 16, M, 2.0)
    x, t = g.mesh()
    u = ScalarField(g, np.sin(2 * x + t) * np.exp(t))
    dt = fd_gradient(u)[-1].values
    dtt = fd_hessian(u)[1][1].values
    exact_dt = np.exp(t) * (np.cos(2 * x + t) + np.sin(2 * x + t))
    exact_dtt = np.exp(t) * 2 * np.cos(2 * x + t)
    interior = g.interior_mask()
    return max(np.max(np.abs(dt - exact_dt)[interior]), np.max(np.abs(dtt - exact_dtt)[interior]))


@pytest.mark.parametrize("M", [32, 64])
def test_second_order_refinement(M):
    ratio = _interior_stencil_error(M) / _interior_stencil_error(2 * M)
    assert 3.5 <= ratio <= 4.5


def test_interpolation():
    g = make_grid(2, 4, 8, 2.0)
    u = ScalarField.from_function(g, lambda x, t: x + 0 * t)
    center = (g.tangential_coords[0][1] + g.tangential_coords[0][2]) / 2
    assert interpolate(u, (center, 0.4)) == pytest.approx(center, abs=1e-15)
    w = ScalarField.from_function(g, lambda x, t: np.sin(3 * x) * np.cos(t))
    node = (g.tangential_coords[0][3], g.normal_coords[5])
    assert interpolate(w, node) == w.values[3, 5]
    tf = ScalarField.from_function(g, lambda x, t: t + 0 * x)
    assert abs(interpolate(tf, (0.1, 0.3)) - 0.3) < 1e-14
    with pytest.raises(GridError):
        interpolate_many(tf, np.array([[0.0, 1.5]]))


def test_field_rejects_bad_values():
    g = make_grid(2, 4, 4, 1.0)
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(3))


def test_csv_and_json_round_trip(tmp_path):
    g = make_grid(3, 4, 6, 1.5)
    u = ScalarField.from_function(g, lambda x, y, t: np.exp(x) * np.sin(y + t) / 3)
    write_field_csv(tmp_path / "u.csv", u)
    write_grid_json(tmp_path / "g.json", g)
    g2 = read_grid_json(tmp_path / "g.json")
    u2 = read_field_csv(tmp_path / "u.csv", g2)
    assert np.array_equal(u.values, u2.values)
    assert (tmp_path / "u.csv").read_text().splitlines()[0] == "x1,x2,t,value"
    with pytest.raises(GridError):
        read_field_csv(tmp_path / "u.csv", make_grid(3, 4, 8, 1.5))
