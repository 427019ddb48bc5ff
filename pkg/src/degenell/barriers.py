"""Homogeneous supersolutions psi = t^sigma (eps|x'|^2 + t^2)^{(mu-sigma)/2} + K t^mu.

``construct_barrier`` picks explicit eps, K from sup norms of the
coefficients so that L psi <= -(c_sigma/2) t^sigma (eps|x'|^2 + t^2)^{(mu-sigma)/2};
``verify_barrier`` checks that inequality by dense sampling with analytic
derivatives. A PASS is a sampled certificate, not a proof.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid, make_grid
from .operators import OperatorCoefficients, verify_conditions


class BarrierError(ValueError):
    pass


@dataclass(frozen=True)
class BarrierSpec:
    sigma: float
    mu: float
    eps: float
    K: float
    c_sigma: float
    c_mu: float
    C1: float = 0.0
    C2: float = 0.0
    delta_split: float = math.inf
    center: tuple[float, ...] = ()
    derivation: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0 <= self.sigma < self.mu):
            raise BarrierError(f"need 0 <= sigma < mu, got sigma={self.sigma}, mu={self.mu}")
        if not (0 < self.eps <= 1):
            raise BarrierError(f"eps must lie in (0, 1], got {self.eps}")
        if not self.K >= 0:
            raise BarrierError(f"K must be >= 0, got {self.K}")
        if not (self.c_sigma > 0 and self.c_mu > 0):
            raise BarrierError("margins c_sigma, c_mu must be positive")

    def with_K(self, K: float) -> BarrierSpec:
        return replace(self, K=K)


def _sup_norms(coeffs: OperatorCoefficients, grid: Grid, sigma: float) -> dict[str, float]:
    a, b, _ = coeffs.sample_grid(grid)
    n = coeffs.n
    a_tn = a[: n - 1, n - 1]  # (n-1, ...) mixed tangential-normal entries
    a_tt = a[: n - 1, : n - 1]
    b_t = b[: n - 1]
    return {
        "a_nn": float(np.max(np.abs(a[n - 1, n - 1]))),
        "b_n": float(np.max(np.abs(b[n - 1]))),
        "(2sigma+1)a_nn+b_n": float(np.max(np.abs((2 * sigma + 1) * a[n - 1, n - 1] + b[n - 1]))),
        "|a_an|": float(np.max(np.sqrt(np.sum(a_tn**2, axis=0)))),
        # Frobenius norm bounds the spectral norm of the tangential block
        "|a_ab|": float(np.max(np.sqrt(np.sum(a_tt**2, axis=(0, 1))))),
        "tr a_ab": float(np.max(np.abs(np.einsum("ii...->...", a_tt)))),
        "|2sigma a_an + b_a|": float(np.max(np.sqrt(np.sum((2 * sigma * a_tn + b_t) ** 2, axis=0)))),
    }


def construct_barrier(
    coeffs: OperatorCoefficients,
    sigma: float,
    mu: float,
    grid: Grid | None = None,
    center: tuple[float, ...] | None = None,
) -> BarrierSpec:
    """Explicit eps, K following the two-region argument.

    With X = eps|x'|^2 + t^2 and d = mu - sigma, L psi_hat = t^sigma X^{d/2-2} (I1 + I2):

      I1 = d(d-2) a_nn t^4 + Q(sigma) X^2 + d((2sigma+1)a_nn + b_n) t^2 X
      I2 = d(d-2) t^2 (2eps a_an x_a t + eps^2 a_ab x_a x_b)
           + d X (eps tr(a_ab) t^2 + eps (2sigma a_an + b_a) t x_a)

    Bounds (t^2 <= X, sqrt(eps)|x'| <= sqrt(X), 2 sqrt(eps)|x'| t <= X, eps <= 1):
      I1 <= -(7/8) c_sigma X^2 + C2 t^4,   C2 = max(d(d-2), 0)|a_nn| + 2 k^2 / c_sigma,
           k = d |(2sigma+1)a_nn + b_n|     (Cauchy: |k| t^2 X <= (c_sigma/8) X^2 + 2k^2/c_sigma t^4)
      I2 <= C1 sqrt(eps) X^2,  C1 = |d(d-2)| (|a_an| + |a_ab|) + d |tr a_ab| + (d/2)|2sigma a_an + b_a|
    Then eps = min(1, (c_sigma / (8 C1))^2) gives L psi_hat <= (-3/4 c_sigma + C2 t^4/X^2) weight;
    delta = (c_sigma / (4 C2))^{1/4} handles t <= delta sqrt(X); K = C2 / (c_mu delta^d) handles the rest.
    """
    if sigma < 0:
        raise BarrierError(f"sigma must be >= 0, got {sigma}")
    if not mu > sigma:
        raise BarrierError(f"mu must exceed sigma, got sigma={sigma}, mu={mu}")
    grid = grid or make_grid(coeffs.n, 32, 64, 2.0)
    rep_mu = verify_conditions(coeffs, grid, mu)
    c_mu = rep_mu.c_exponent
    c_sigma = rep_mu.c0 if sigma == 0 else verify_conditions(coeffs, grid, sigma).c_exponent
    if not (c_sigma > 0 and c_mu > 0):
        raise BarrierError(f"nonpositive margins: c_sigma={c_sigma:.6g}, c_mu={c_mu:.6g}")

    d = mu - sigma
    norms = _sup_norms(coeffs, grid, sigma)
    k = d * norms["(2sigma+1)a_nn+b_n"]
    C2_terms = {"d(d-2)^+ |a_nn|": max(d * (d - 2), 0.0) * norms["a_nn"], "2k^2/c_sigma": 2 * k * k / c_sigma}
    C1_terms = {
        "|d(d-2)| |a_an|": abs(d * (d - 2)) * norms["|a_an|"],
        "|d(d-2)| |a_ab|": abs(d * (d - 2)) * norms["|a_ab|"],
        "d |tr a_ab|": d * norms["tr a_ab"],
        "d/2 |2sigma a_an + b_a|": 0.5 * d * norms["|2sigma a_an + b_a|"],
    }
    C1, C2 = sum(C1_terms.values()), sum(C2_terms.values())
    eps = 1.0 if C1 == 0 else min(1.0, (c_sigma / (8 * C1)) ** 2)
    if C2 == 0:
        delta, K = math.inf, 0.0
    else:
        delta = (c_sigma / (4 * C2)) ** 0.25
        K = C2 / (c_mu * delta**d)
    derivation = {
        "sup_norms": norms,
        "sup_norm_sample": grid.to_dict(),
        "C1_terms": C1_terms,
        "C2_terms": C2_terms,
        "note": "C1 includes the sigma-dependent cross term 2 sigma |a_an| from differentiating t^sigma",
    }
    return BarrierSpec(
        sigma=float(sigma), mu=float(mu), eps=eps, K=K, c_sigma=c_sigma, c_mu=c_mu,
        C1=C1, C2=C2, delta_split=delta,
        center=tuple(center) if center is not None else (0.0,) * (coeffs.n - 1),
        derivation=derivation,
    )


def _weight_parts(spec: BarrierSpec, points: np.ndarray):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    t = pts[:, -1]
    if np.any(t <= 0):
        raise BarrierError("barrier derivatives are evaluated at t > 0 only")
    center = np.asarray(spec.center, dtype=float) if spec.center else np.zeros(pts.shape[1] - 1)
    y = pts[:, :-1] - center
    X = spec.eps * np.sum(y * y, axis=1) + t * t
    return y, t, X


def eval_barrier(spec: BarrierSpec, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, gradient (m, n) and Hessian (m, n, n) of psi_hat + K t^mu at (m, n) points."""
    y, t, X = _weight_parts(spec, points)
    m, n = len(t), y.shape[1] + 1
    p = 0.5 * (spec.mu - spec.sigma)
    s, eps = spec.sigma, spec.eps

    dX = np.concatenate([2 * eps * y, 2 * t[:, None]], axis=1)
    ddX = np.zeros((m, n, n))
    ddX[:, np.arange(n - 1), np.arange(n - 1)] = 2 * eps
    ddX[:, -1, -1] = 2.0

    F = X**p
    dF = (p * X ** (p - 1))[:, None] * dX
    ddF = (p * (p - 1) * X ** (p - 2))[:, None, None] * dX[:, :, None] * dX[:, None, :] \
        + (p * X ** (p - 1))[:, None, None] * ddX

    G = t**s
    dG = np.zeros((m, n))
    dG[:, -1] = s * t ** (s - 1)
    ddG = np.zeros((m, n, n))
    ddG[:, -1, -1] = s * (s - 1) * t ** (s - 2)

    value = G * F
    grad = G[:, None] * dF + F[:, None] * dG
    hess = G[:, None, None] * ddF + dG[:, :, None] * dF[:, None, :] + dF[:, :, None] * dG[:, None, :] \
        + F[:, None, None] * ddG

    if spec.K:
        mu, K = spec.mu, spec.K
        value = value + K * t**mu
        grad[:, -1] += K * mu * t ** (mu - 1)
        hess[:, -1, -1] += K * mu * (mu - 1) * t ** (mu - 2)
    return value, grad, hess


def barrier_weight(spec: BarrierSpec, points) -> np.ndarray:
    _, t, X = _weight_parts(spec, points)
    return t**spec.sigma * X ** (0.5 * (spec.mu - spec.sigma))


def apply_operator(coeffs: OperatorCoefficients, spec: BarrierSpec, points) -> np.ndarray:
    """L(psi_hat + K t^mu) at points, from analytic derivatives."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    value, grad, hess = eval_barrier(spec, pts)
    a, b, c = coeffs.sample([pts[:, k] for k in range(pts.shape[1])])
    t = pts[:, -1]
    second = np.einsum("ijm,mij->m", a, hess)
    first = np.einsum("im,mi->m", b, grad)
    return t * t * second + t * first + c * value


@dataclass
class BarrierCertificate:
    spec: BarrierSpec
    worst_ratio: float
    worst_point: list[float]
    sample_size: int
    t_min: float
    worst_ratio_inner: float  # region t <= delta sqrt(X)
    worst_ratio_outer: float

    @property
    def threshold(self) -> float:
        return -0.5 * self.spec.c_sigma

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.threshold

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "sigma": s.sigma, "mu": s.mu, "eps": s.eps, "K": s.K,
            "c_sigma": s.c_sigma, "c_mu": s.c_mu,
            "worst_ratio": self.worst_ratio, "worst_point": self.worst_point,
            "sample_size": self.sample_size,
            "threshold": self.threshold, "passed": self.passed, "t_min": self.t_min,
            "C1": s.C1, "C2": s.C2, "delta_split": s.delta_split if math.isfinite(s.delta_split) else None,
            "worst_ratio_inner": self.worst_ratio_inner, "worst_ratio_outer": self.worst_ratio_outer,
            "derivation": s.derivation,
            "certification": "sampled (not a formal proof)",
        }


def barrier_sample(n: int, n_tangential: int = 64, n_normal: int = 1600, t_min: float = 1e-8,
                   t_max: float = 1.0) -> np.ndarray:
    """Lattice: uniform in x' over [-1, 1]^(n-1), log-spaced in t over [t_min, t_max]."""
    x = np.linspace(-1.0, 1.0, n_tangential)
    t = np.geomspace(t_min, t_max, n_normal)
    mesh = np.meshgrid(*([x] * (n - 1) + [t]), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DEGENELL_THREADS", "1")))
    except ValueError:
        return 1


def ratios(coeffs: OperatorCoefficients, spec: BarrierSpec, points: np.ndarray) -> np.ndarray:
    """L(barrier) / (t^sigma X^{(mu-sigma)/2}) pointwise."""
    chunks = np.array_split(points, max(1, len(points) // 50_000))
    workers = _threads()

    def one(chunk):
        return apply_operator(coeffs, spec, chunk) / barrier_weight(spec, chunk)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    return np.concatenate(parts)


def verify_barrier(coeffs: OperatorCoefficients, spec: BarrierSpec, sample: np.ndarray) -> BarrierCertificate:
    """PASS iff max over the sample of L(barrier)/weight <= -c_sigma/2."""
    pts = np.atleast_2d(np.asarray(sample, dtype=float))
    r = ratios(coeffs, spec, pts)
    i = int(np.argmax(r))
    _, t, X = _weight_parts(spec, pts)
    inner = t <= spec.delta_split * np.sqrt(X)
    return BarrierCertificate(
        spec=spec,
        worst_ratio=float(r[i]),
        worst_point=[float(v) for v in pts[i]],
        sample_size=len(pts),
        t_min=float(t.min()),
        worst_ratio_inner=float(r[inner].max()) if inner.any() else -math.inf,
        worst_ratio_outer=float(r[~inner].max()) if (~inner).any() else -math.inf,
    )
