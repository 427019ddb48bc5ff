import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenell import analysis as A
from degenell.grid import ScalarField, make_grid
from degenell.manufactured import make_case
from degenell.operators import OperatorCoefficients, faces_from_field
from degenell.solver import solve_direct

G = make_grid(2, 32, 256, 2.0)


def field(fn, grid=G):
    return ScalarField.from_function(grid, lambda x, t: fn(x, t) + 0 * x)


@pytest.mark.parametrize("p", [0.25, 0.5, 1.5, 2.5])
def test_exponent_recovery(p):
    fit = A.fit_boundary_decay(field(lambda x, t: t**p), 0.0, [0.0])
    assert abs(fit.exponent - p) <= 0.01 and fit.r2 >= 0.9999 and not fit.drift


def test_offset_anchor_and_array_anchor():
    u = field(lambda x, t: 2 + np.cos(x) + t**1.5)
    by_function = A.fit_boundary_decay(u, lambda x: 2 + np.cos(x), [0.25])
    by_nodes = A.fit_boundary_decay(u, 2 + np.cos(G.tangential_coords[0]), [0.25])
    assert abs(by_function.exponent - 1.5) <= 0.01
    assert abs(by_nodes.exponent - 1.5) <= 0.01


def test_exact_sentinel():
    u = field(lambda x, t: 3.0)
    fit = A.fit_boundary_decay(u, 3.0, [0.0])
    assert fit.exact and fit.to_dict()["exponent"] == "exact"


def test_window_validation():
    u = field(lambda x, t: t)
    with pytest.raises(A.AnalysisError):
        A.fit_boundary_decay(u, 0.0, [0.0], window=(0.1, 0.9))
    with pytest.raises(A.AnalysisError):
        A.fit_boundary_decay(u, 0.0, [0.0], window=(0.1, 0.11))


def test_t_log_t_decay_fit_matches_least_squares_oracle():
    grid = make_grid(2, 16, 1024, 3.0)
    u = field(lambda x, t: np.where(t > 0, t * np.log(np.where(t > 0, t, 1)), 0.0), grid)
    fit = A.fit_boundary_decay(u, 0.0, [0.0], window=(1e-4, 0.1))
    # oracle: straight least squares on the mesh levels inside the window
    t = (np.arange(1025) / 1024.0) ** 3
    t = t[(t >= 1e-4) & (t <= 0.1)]
    slope = np.polyfit(np.log(t), np.log(t * np.abs(np.log(t))), 1)[0]
    assert fit.exponent == pytest.approx(slope, abs=1e-10)
    assert fit.exponent == pytest.approx(0.7907, abs=5e-4)
    assert fit.drift and fit.r2 < 0.999
    assert A.detect_log_factor(u, [0.0], 1.0).verdict == "log"


def test_weighted_decay_examples():
    d1, d2 = A.weighted_derivative_decay(field(lambda x, t: t**1.5), [0.0])
    assert abs(d1.exponent - 1.5) <= 0.02 and abs(d2.exponent - 1.5) <= 0.02
    d1, d2 = A.weighted_derivative_decay(field(lambda x, t: t**2), [0.0])
    assert abs(d2.exponent - 2) <= 0.02 and abs(d1.exponent - 2) <= 0.02
    d1, d2 = A.weighted_derivative_decay(field(lambda x, t: 3 * x), [0.2])
    assert abs(d1.exponent - 1) <= 0.01 and d2.exact


def test_holder_examples():
    unit = make_grid(2, 8, 16, 1.0)
    assert A.holder_seminorm(field(lambda x, t: 5.0, unit), 0.5) == 0
    assert A.holder_seminorm(field(lambda x, t: t, unit), 0.5, [(0, 1), (0, 1)]) == pytest.approx(1.0, abs=1e-12)
    root = A.holder_seminorm(field(lambda x, t: np.sqrt(t)), 0.5)
    assert 0.99 <= root <= 1 + 1e-12
    with pytest.raises(A.AnalysisError):
        A.holder_seminorm(field(lambda x, t: t), 1.0)
    with pytest.raises(A.AnalysisError):
        A.holder_seminorm(field(lambda x, t: t), 0.5, [(2, 3), (0, 1)])


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(0.1, 0.9), seed=st.integers(0, 1000))
def test_holder_estimate_is_a_lower_bound(alpha, seed):
    # |sin a - sin b| <= |a - b| <= 2^(1-alpha) |a - b|^alpha on [-1, 1]
    u = field(lambda x, t: np.sin(x))
    assert A.holder_seminorm(u, alpha, seed=seed) <= 2 ** (1 - alpha) + 1e-12


def test_weighted_norm_examples():
    one = A.weighted_norm_C_k_alpha_2(field(lambda x, t: 1.0), 0, 0.5)
    assert one.total == pytest.approx(1.0, abs=1e-9) and not one.diverging
    smooth = A.weighted_norm_C_k_alpha_2(field(lambda x, t: t**1.5), 0, 0.5)
    assert np.isfinite(smooth.total) and not smooth.diverging
    log = A.weighted_norm_C_k_alpha_2(field(lambda x, t: np.where(t > 0, t * np.log(np.where(t > 0, t, 1)), 0)), 1, 0.5)
    assert "u" in log.diverging
    with pytest.raises(A.AnalysisError):
        A.weighted_norm_C_k_alpha_2(field(lambda x, t: t), 2, 0.5)


def test_normal_trace_linear_example():
    g = make_grid(2, 128, 256, 2.0)
    coeffs = OperatorCoefficients.build([["1", "0"], ["0", "1"]], ["0", "0"], "-3", 2)
    exact = field(lambda x, t: 1 + t, g)
    f = field(lambda x, t: -3 * (1 + t), g)
    u, _ = solve_direct(coeffs, f, faces_from_field(exact))
    res = A.normal_trace_check(coeffs, u, f)
    np.testing.assert_allclose(res.u1, 1.0, atol=1e-12)
    assert res.discrepancy <= 1e-3


def test_normal_trace_vanishes_for_high_power():
    g = make_grid(2, 64, 128, 2.0)
    case = make_case("monomial", 1.0, 0.0, 2.5, "1")
    exact, f = case.fields(g)
    u, _ = solve_direct(case.coefficients(), f, faces_from_field(exact))
    res = A.normal_trace_check(case.coefficients(), u, f)
    assert np.max(np.abs(res.u1)) <= 1e-3 and np.max(np.abs(res.fd_trace)) <= 1e-3


def test_normal_trace_precondition():
    coeffs = OperatorCoefficients.constant(1.0, 1.0, -1.0, 2)  # b_n + c = 0
    u = field(lambda x, t: t)
    with pytest.raises(A.AnalysisError):
        A.normal_trace_check(coeffs, u, u)


def test_tangential_bound_examples():
    g = make_grid(2, 64, 128, 2.0)
    assert A.tangential_bound_check(field(lambda x, t: t**1.5, g))[0] <= 1e-12
    sup, node = A.tangential_bound_check(field(lambda x, t: x * t**1.5, g))
    t = g.normal_coords
    assert sup == pytest.approx(np.max(t[t <= 0.5]) ** 1.5, rel=1e-12)
    sup, _ = A.tangential_bound_check(field(lambda x, t: np.sin(x) * (1 + t), g))
    t_top = np.max(t[t <= 0.5])
    assert sup == pytest.approx(1 + t_top, rel=1e-3)
    with pytest.raises(A.AnalysisError):
        A.tangential_bound_check(field(lambda x, t: t, g), [(-1, 1), (0, 0.5)])


def test_log_factor_examples():
    tlogt = field(lambda x, t: np.where(t > 0, t * np.log(np.where(t > 0, t, 1)), 0))
    r = A.detect_log_factor(tlogt, [0.0], 1.0)
    assert r.verdict == "log" and abs(r.slope - 1) <= 0.02
    r = A.detect_log_factor(field(lambda x, t: t**1.5), [0.0], 1.5)
    assert r.verdict == "clean" and abs(r.slope) <= 0.02
    assert A.detect_log_factor(field(lambda x, t: t**1.5), [0.0], 1.0).verdict == "inconclusive"


def test_log_factor_underflow_is_excluded():
    r = A.detect_log_factor(field(lambda x, t: t**1.5), [0.0], 200.0, window=(1e-3, 0.2))
    assert r.n_points > 0
    with pytest.raises(A.AnalysisError):
        A.detect_log_factor(field(lambda x, t: t), [0.0], 0.0)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5])
def test_interior_ball_seminorms_bounded_uniformly(s):
    # u = psi t^s with alpha <= min(s, 1): the ball seminorms stay bounded as t -> 0
    g = make_grid(2, 64, 256, 2.0)
    u = ScalarField.from_function(g, lambda x, t: (1 + 0.5 * np.sin(x)) * t**s)
    levels = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4]
    vals = A.interior_ball_seminorms(u, 0.5, [0.0], levels)
    assert np.all(np.isfinite(vals))
    assert np.max(vals[:3]) <= 1.05 * np.max(vals[3:])


def test_weighted_traces_vanish_on_computed_solution():
    g = make_grid(2, 64, 128, 2.0)
    case = make_case("monomial", 1.0, 0.0, 1.5, "1 + t")
    exact, f = case.fields(g)
    u, _ = solve_direct(case.coefficients(), f, faces_from_field(exact))
    t_min, w1, w2 = A.weighted_traces(u, [0.0])
    alpha = 0.5
    assert w1 <= t_min ** (0.9 * alpha) and w2 <= t_min ** (0.9 * alpha)
