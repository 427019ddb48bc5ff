import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenell.barriers import (
    BarrierError,
    BarrierSpec,
    apply_operator,
    barrier_sample,
    construct_barrier,
    eval_barrier,
    verify_barrier,
)
from degenell.operators import OperatorCoefficients, eval_Q

MODEL = OperatorCoefficients.constant(1.0, 0.0, -1.0, 2)
VARIABLE = OperatorCoefficients.build(
    [["1 + 0.2*sin(x1)", "0.1*t"], ["0.1*t", "1 + 0.1*x1^2"]], ["0.2", "0.3"], "-1.5 - 0.2*x1^2", 2
)
SAMPLE = barrier_sample(2)


def test_sample_size_and_depth():
    assert len(SAMPLE) >= 100_000
    assert SAMPLE[:, -1].min() == pytest.approx(1e-8)


@pytest.mark.parametrize("sigma,mu", [(0.0, 0.5), (0.5, 1.0)])
def test_model_barriers_pass(sigma, mu):
    spec = construct_barrier(MODEL, sigma, mu)
    assert spec.eps > 0 and spec.K >= 0
    cert = verify_barrier(MODEL, spec, SAMPLE)
    assert cert.passed and cert.worst_ratio <= -spec.c_sigma / 2


def test_model_margins():
    spec = construct_barrier(MODEL, 0.0, 0.5)
    assert spec.c_sigma == 1.0 and spec.c_mu == 1.25


@pytest.mark.parametrize("sigma,mu", [(0.0, 0.5), (0.3, 1.0), (0.5, 1.2), (0.0, 1.0)])
def test_variable_coefficient_barriers_pass(sigma, mu):
    cert = verify_barrier(VARIABLE, construct_barrier(VARIABLE, sigma, mu), SAMPLE)
    assert cert.passed


def test_three_dimensional_barrier_passes():
    coeffs = OperatorCoefficients.constant(1.0, 0.0, -1.0, 3)
    sample = barrier_sample(3, 24, 200)
    assert len(sample) >= 100_000
    assert verify_barrier(coeffs, construct_barrier(coeffs, 0.0, 0.5), sample).passed


@pytest.mark.parametrize("sigma,mu", [(-0.1, 0.5), (0.5, 0.5), (0.6, 0.5)])
def test_invalid_exponents(sigma, mu):
    with pytest.raises(BarrierError):
        construct_barrier(MODEL, sigma, mu)


def test_nonpositive_margin_rejected():
    with pytest.raises(BarrierError):
        construct_barrier(MODEL, 0.0, 2.0)  # Q(2) = 1 > 0


def _poly_spec(K=0.0):
    return BarrierSpec(sigma=0.0, mu=2.0, eps=1.0, K=K, c_sigma=1.0, c_mu=1.0)


def test_quadratic_barrier_by_hand():
    value, grad, hess = eval_barrier(_poly_spec(), np.array([[0.0, 0.5]]))
    assert value[0] == pytest.approx(0.25)
    np.testing.assert_allclose(grad[0], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(hess[0], 2 * np.eye(2), atol=1e-14)
    v1, g1, h1 = eval_barrier(_poly_spec(K=1.0), np.array([[0.0, 0.5]]))
    assert v1[0] - value[0] == pytest.approx(0.25)
    assert g1[0, 1] - grad[0, 1] == pytest.approx(1.0)
    assert h1[0, 1, 1] - hess[0, 1, 1] == pytest.approx(2.0)


def test_rejects_boundary_points():
    with pytest.raises(BarrierError):
        eval_barrier(_poly_spec(), np.array([[0.0, 0.0]]))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = construct_barrier(VARIABLE, 0.3, 1.0)
    pts = np.column_stack([rng.uniform(-1, 1, 100), rng.uniform(0.05, 1, 100)])
    _, grad, hess = eval_barrier(spec, pts)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        vp, gp, _ = eval_barrier(spec, pts + e)
        vm, gm, _ = eval_barrier(spec, pts - e)
        fd = (vp - vm) / (2 * h)
        assert np.max(np.abs(fd - grad[:, k]) / (np.abs(grad[:, k]) + 1e-3)) <= 1e-6
        fd_h = (gp - gm) / (2 * h)
        assert np.max(np.abs(fd_h - hess[:, k, :]) / (np.abs(hess[:, k, :]) + 1e-2)) <= 1e-5


def test_power_term_alone_is_an_eigenfunction():
    spec = construct_barrier(MODEL, 0.0, 0.5)
    pts = SAMPLE[::97]
    power_part = apply_operator(MODEL, spec.with_K(1.0), pts) - apply_operator(MODEL, spec.with_K(0.0), pts)
    t = pts[:, -1]
    q = eval_Q(MODEL, (0.0, 0.0), 0.5)
    np.testing.assert_allclose(power_part, q * t**0.5, rtol=1e-9, atol=1e-14)
    assert np.all(power_part <= -spec.c_mu * t**0.5 * (1 - 1e-12))


def test_missing_correction_fails_and_localises():
    tight = OperatorCoefficients.constant(1.0, 0.0, -1.5, 2)  # Q(1.8) = -0.06
    spec = construct_barrier(tight, 0.0, 1.8)
    assert verify_barrier(tight, spec, SAMPLE).passed
    cert = verify_barrier(tight, spec.with_K(0.0), SAMPLE)
    assert not cert.passed
    # along x' = 0 the barrier is t^mu, whose ratio is Q(mu) = -0.06
    assert abs(cert.worst_point[0]) < 0.05
    assert cert.worst_ratio == pytest.approx(-0.06, abs=0.02)


@pytest.mark.parametrize("coeffs,sigma,mu", [(VARIABLE, 0.3, 1.0), (OperatorCoefficients.constant(1, 0, -1.5), 0, 1.8)])
def test_outer_ratio_monotone_in_K(coeffs, sigma, mu):
    spec = construct_barrier(coeffs, sigma, mu)
    outer = [verify_barrier(coeffs, spec.with_K(K), SAMPLE[::7]).worst_ratio_outer
             for K in np.linspace(0, 2 * spec.K, 6)]
    assert all(b <= a + 1e-12 for a, b in zip(outer, outer[1:]))


def test_certificate_json_fields():
    spec = construct_barrier(MODEL, 0.0, 0.5)
    d = verify_barrier(MODEL, spec, SAMPLE[:1000]).to_dict()
    for key in ("sigma", "mu", "eps", "K", "c_sigma", "c_mu", "worst_ratio", "worst_point", "sample_size", "passed"):
        assert key in d
    assert "sigma" in d["derivation"]["note"]
