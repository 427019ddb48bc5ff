"""Measurements of boundary decay, weighted derivative decay, Hoelder quotients,
the normal-derivative boundary formula and logarithmic boundary factors on
nodal fields.

All Hoelder-type quantities are sampled lower bounds of the true suprema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .grid import Grid, ScalarField, fd_gradient, fd_hessian, interpolate_many, make_grid
from .operators import OperatorCoefficients

BoundaryValue = Union[float, np.ndarray, Callable[..., float], ScalarField]
Region = Sequence[tuple[float, float]]

NUMERICAL_ZERO = 1e-13
MIN_FIT_POINTS = 6


class AnalysisError(ValueError):
    pass


@dataclass
class DecayFit:
    exponent: float
    C: float
    r2: float
    t_min: float
    t_max: float
    anchor: tuple[float, ...]
    n_points: int
    exact: bool = False
    drift: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["anchor"] = list(self.anchor)
        if self.exact:
            d["exponent"] = "exact"
        return d


def default_window(grid: Grid, t_max: float = 0.1) -> tuple[float, float]:
    """[t_3, t_max]: skips the two smallest positive levels, where one-sided stencils dominate."""
    return float(grid.normal_coords[3]), t_max


def normal_profile(field: ScalarField, x0: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """(t_j, field(x0, t_j)) along the normal line through x0."""
    t = field.grid.normal_coords
    pts = np.column_stack([np.full(len(t), float(x)) for x in x0] + [t])
    return t.copy(), interpolate_many(field, pts)


def _anchor_value(u0: BoundaryValue, grid: Grid, x0: Sequence[float]) -> float:
    if isinstance(u0, ScalarField):
        return float(interpolate_many(u0, np.array([list(x0) + [0.0]]))[0])
    if callable(u0):
        return float(u0(*x0))
    arr = np.asarray(u0, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    bottom = ScalarField(grid, np.repeat(arr[..., None], grid.M + 1, axis=-1))
    return float(interpolate_many(bottom, np.array([list(x0) + [0.0]]))[0])


def fit_power_law(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least squares log y = log C + p log t; returns (p, C, R^2)."""
    X, Y = np.log(t), np.log(y)
    p, logC = np.polyfit(X, Y, 1)
    resid = Y - (p * X + logC)
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    return float(p), float(math.exp(logC)), r2


def _fit_profile(t, diff, window, anchor, drift_r2, zero_tol=NUMERICAL_ZERO) -> DecayFit:
    lo, hi = window
    if not (0 < lo < hi <= 0.5):
        raise AnalysisError(f"window must satisfy 0 < t_min < t_max <= 0.5, got {window}")
    inside = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if inside.sum() < MIN_FIT_POINTS:
        raise AnalysisError(f"window {window} holds {inside.sum()} mesh levels, need {MIN_FIT_POINTS}")
    usable = inside & (np.abs(diff) >= zero_tol)
    if not usable.any():
        return DecayFit(math.inf, 0.0, 1.0, lo, hi, tuple(anchor), 0, exact=True)
    if usable.sum() < MIN_FIT_POINTS:
        raise AnalysisError(f"only {usable.sum()} levels with |difference| >= {zero_tol:.3g}")
    p, C, r2 = fit_power_law(t[usable], np.abs(diff[usable]))
    return DecayFit(p, C, r2, lo, hi, tuple(anchor), int(usable.sum()), drift=r2 < drift_r2)


def fit_boundary_decay(
    u: ScalarField,
    u0: BoundaryValue,
    x0: Sequence[float],
    window: tuple[float, float] | None = None,
    drift_r2: float = 0.999,
) -> DecayFit:
    """Fit |u(x0, t) - u0(x0)| ~ C t^p over the window. ``drift`` marks fits whose
    log-log profile bends (R^2 below ``drift_r2``), e.g. from a log factor."""
    grid = u.grid
    window = window or default_window(grid)
    t, v = normal_profile(u, x0)
    diff = v - _anchor_value(u0, grid, x0)
    return _fit_profile(t, diff, window, x0, drift_r2)


def gradient_magnitude(u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, np.sqrt(sum(g.values**2 for g in fd_gradient(u))))


def hessian_magnitude(u: ScalarField) -> ScalarField:
    H = fd_hessian(u)
    return ScalarField(u.grid, np.sqrt(sum(H[i][j].values ** 2 for i in range(u.grid.dim) for j in range(u.grid.dim))))


def weighted_fields(u: ScalarField) -> tuple[ScalarField, ScalarField]:
    """(t |Du|, t^2 |D^2 u|) with Euclidean / Frobenius magnitudes."""
    t = u.grid.mesh()[-1]
    return (ScalarField(u.grid, t * gradient_magnitude(u).values),
            ScalarField(u.grid, t * t * hessian_magnitude(u).values))


def weighted_derivative_decay(
    u: ScalarField,
    x0: Sequence[float],
    window: tuple[float, float] | None = None,
    drift_r2: float = 0.999,
) -> tuple[DecayFit, DecayFit]:
    """Decay fits of t|Du| and t^2|D^2u| along the normal line (both vanish on t = 0)."""
    window = window or default_window(u.grid)
    w1, w2 = weighted_fields(u)
    # rounding in a k-th difference on the graded mesh grows like M^k relative to |u|
    scale = NUMERICAL_ZERO * max(1.0, u.sup())
    fits = []
    for order, w in enumerate((w1, w2), start=1):
        t, v = normal_profile(w, x0)
        fits.append(_fit_profile(t, v, window, x0, drift_r2, scale * u.grid.M**order))
    return fits[0], fits[1]


def weighted_traces(u: ScalarField, x0: Sequence[float]) -> tuple[float, float, float]:
    """(t_min, t|Du|, t^2|D^2u|) at the smallest positive mesh level t_min."""
    w1, w2 = weighted_fields(u)
    _, v1 = normal_profile(w1, x0)
    _, v2 = normal_profile(w2, x0)
    return float(u.grid.normal_coords[1]), float(v1[1]), float(v2[1])


def _region_mask(grid: Grid, region: Region | None) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    if region is None:
        return mask
    if len(region) != grid.dim:
        raise AnalysisError(f"region needs {grid.dim} (lo, hi) pairs")
    for k, (lo, hi) in enumerate(region):
        c = grid.mesh()[k]
        mask &= (c >= lo - 1e-12) & (c <= hi + 1e-12)
    return mask


def holder_seminorm(
    field: ScalarField,
    alpha: float,
    region: Region | None = None,
    sample_pairs: int = 4000,
    seed: int = 0,
) -> float:
    """Sampled lower bound of sup |w(x) - w(y)| / |x - y|^alpha over node pairs in ``region``.

    Pairs: all axis-neighbour pairs, all pairs within a lattice subsample that
    includes the region's extreme nodes, and ``sample_pairs`` random pairs.
    """
    if not 0 < alpha < 1:
        raise AnalysisError(f"alpha must lie in (0, 1), got {alpha}")
    g = field.grid
    mask = _region_mask(g, region)
    if not mask.any():
        raise AnalysisError("empty region")
    best = 0.0
    vals = field.values
    coords = g.mesh()
    # axis neighbours
    for k in range(g.dim):
        sl0 = [slice(None)] * g.dim
        sl1 = [slice(None)] * g.dim
        sl0[k], sl1[k] = slice(0, -1), slice(1, None)
        sl0, sl1 = tuple(sl0), tuple(sl1)
        both = mask[sl0] & mask[sl1]
        if both.any():
            dv = np.abs(vals[sl1] - vals[sl0])[both]
            dx = np.abs(coords[k][sl1] - coords[k][sl0])[both]
            best = max(best, float(np.max(dv / dx**alpha)))
    pts = np.stack([c[mask] for c in coords], axis=1)
    v = vals[mask]
    m = len(v)
    if m < 2:
        return best
    # lattice subsample: per-axis extreme and evenly spaced indices
    idx = np.unique(np.concatenate([np.linspace(0, m - 1, min(m, 150)).astype(int),
                                    np.argmin(pts, axis=0), np.argmax(pts, axis=0),
                                    [int(np.argmin(v)), int(np.argmax(v))]]))
    P, V = pts[idx], v[idx]
    dist = np.sqrt(np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=2))
    off = dist > 0
    if off.any():
        best = max(best, float(np.max(np.abs(V[:, None] - V[None, :])[off] / dist[off] ** alpha)))
    rng = np.random.default_rng(seed)
    i, j = rng.integers(0, m, sample_pairs), rng.integers(0, m, sample_pairs)
    dist = np.sqrt(np.sum((pts[i] - pts[j]) ** 2, axis=1))
    ok = dist > 0
    if ok.any():
        best = max(best, float(np.max(np.abs(v[i] - v[j])[ok] / dist[ok] ** alpha)))
    return best


def interior_ball_seminorms(
    u: ScalarField, alpha: float, x0: Sequence[float], t_levels: Sequence[float], seed: int = 0
) -> np.ndarray:
    """[u]_{C^alpha} on the box of half-width t/2 around (x0, t), for each t
    (the box contains the ball B_{t/2}(x0, t)). NaN where the box holds < 2 nodes."""
    out = []
    for t in t_levels:
        region = [(x - t / 2, x + t / 2) for x in x0] + [(t / 2, 3 * t / 2)]
        if _region_mask(u.grid, region).sum() < 2:
            out.append(math.nan)
        else:
            out.append(holder_seminorm(u, alpha, region, sample_pairs=500, seed=seed))
    return np.array(out)


def _coarsen(field: ScalarField) -> ScalarField | None:
    g = field.grid
    if g.N % 2 or g.M % 2 or g.N // 2 < 4 or g.M // 2 < 4:
        return None
    # even-indexed nodes of a (N, M, gamma) grid form the (N/2, M/2, gamma) grid exactly
    cg = make_grid(g.dim, g.N // 2, g.M // 2, g.gamma)
    return ScalarField(cg, field.values[(slice(None, None, 2),) * g.dim])


def _third_derivatives(u: ScalarField) -> list[ScalarField]:
    H = fd_hessian(u)
    g = u.grid
    out = []
    for i in range(g.dim):
        for j in range(i, g.dim):
            grads = fd_gradient(H[i][j])
            out += [grads[k] for k in range(j, g.dim)]
    return out


def _norm_components(u: ScalarField, k: int, alpha: float, region, seed) -> dict[str, float]:
    g = u.grid
    t = g.mesh()[-1]
    mask = _region_mask(g, region)

    def sup(fields):
        return max(float(np.max(np.abs(f.values[mask]))) for f in fields)

    def semi(fields):
        return max(holder_seminorm(f, alpha, region, seed=seed) for f in fields)

    grad = fd_gradient(u)
    H = fd_hessian(u)
    hess = [H[i][j] for i in range(g.dim) for j in range(i, g.dim)]

    def weighted(fields, power):
        return [ScalarField(g, t**power * f.values) for f in fields]

    if k == 0:
        w1, w2 = weighted(grad, 1), weighted(hess, 2)
        return {
            "u": sup([u]) + semi([u]),
            "t D u": sup(w1) + semi(w1),
            "t^2 D^2 u": sup(w2) + semi(w2),
        }
    w1, w2 = weighted(hess, 1), weighted(_third_derivatives(u), 2)
    return {
        "u": sup([u]) + sup(grad) + semi(grad),
        "t D^2 u": sup(w1) + semi(w1),
        "t^2 D^3 u": sup(w2) + semi(w2),
    }


@dataclass
class WeightedNorm:
    k: int
    alpha: float
    total: float
    components: dict[str, float]
    coarse_components: dict[str, float] | None = None
    diverging: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def weighted_norm_C_k_alpha_2(
    u: ScalarField,
    k: int,
    alpha: float,
    region: Region | None = None,
    growth_threshold: float = 1.25,
    seed: int = 0,
) -> WeightedNorm:
    """Sampled estimate of |u|_{C^{k,alpha}} + |t D^{k+1} u|_{C^alpha} + |t^2 D^{k+2} u|_{C^alpha}.

    The same estimate on the half-resolution subgrid is computed alongside; a
    component growing by more than ``growth_threshold`` under refinement is
    reported as diverging.
    """
    if k not in (0, 1):
        raise AnalysisError(f"k must be 0 or 1, got {k}")
    comps = _norm_components(u, k, alpha, region, seed)
    result = WeightedNorm(k, alpha, sum(comps.values()), comps)
    coarse = _coarsen(u)
    if coarse is not None:
        cc = _norm_components(coarse, k, alpha, region, seed)
        result.coarse_components = cc
        noise = 1e-9 * max(1.0, u.sup())  # rounding floor for high-order differences
        result.diverging = [name for name in comps if comps[name] > growth_threshold * cc[name] + noise]
    return result


@dataclass
class NormalTraceResult:
    x: np.ndarray  # tangential coordinates of the boundary nodes, (m, n-1)
    u1: np.ndarray
    fd_trace: np.ndarray
    discrepancy: float

    def to_dict(self) -> dict:
        return {"discrepancy": self.discrepancy,
                "u1_range": [float(self.u1.min()), float(self.u1.max())],
                "fd_trace_range": [float(self.fd_trace.min()), float(self.fd_trace.max())],
                "boundary_nodes": int(len(self.u1))}


def _normal_derivative_at_bottom(grid: Grid, values: np.ndarray) -> np.ndarray:
    """One-sided three-point d_t at t = 0 from levels t_0, t_1, t_2."""
    row = grid.d1[-1].getrow(0).toarray().ravel()[:3]
    return values[..., 0] * row[0] + values[..., 1] * row[1] + values[..., 2] * row[2]


def normal_trace_check(
    coeffs: OperatorCoefficients,
    u: ScalarField,
    f: ScalarField,
    margin: float = 0.0,
    inner: float = 1.0,
) -> NormalTraceResult:
    """Compare u1 = (d_t f - d_t c u - b_beta d_beta u)/(b_n + c) on t = 0 with the
    one-sided finite-difference d_t u there, over boundary nodes with |x'|_inf <= inner."""
    g = u.grid
    _, b, c = coeffs.sample_grid(g)
    q1 = (b[-1] + c)[..., 0]
    if np.max(q1) >= -margin:
        raise AnalysisError(f"b_n + c must be < {-margin} on t = 0 (sup = {np.max(q1):.6g})")
    dtf = _normal_derivative_at_bottom(g, f.values)
    dtc = _normal_derivative_at_bottom(g, c)
    ub = u.values[..., 0]
    tang = np.zeros_like(ub)
    for beta in range(g.dim - 1):
        # tangential derivative of the bottom slice along axis beta
        d = g.d1[beta]
        moved = np.moveaxis(ub, beta, 0)
        du = np.moveaxis(np.asarray(d @ moved.reshape(moved.shape[0], -1)).reshape(moved.shape), 0, beta)
        tang += b[beta][..., 0] * du
    u1 = (dtf - dtc * ub - tang) / q1
    fd = _normal_derivative_at_bottom(g, u.values)
    xs = np.stack([m[..., 0] for m in g.mesh()[:-1]], axis=-1)
    keep = np.all(np.abs(xs) <= inner + 1e-12, axis=-1)
    return NormalTraceResult(xs[keep], u1[keep], fd[keep], float(np.max(np.abs(u1[keep] - fd[keep]))))


def tangential_bound_check(u: ScalarField, inner_region: Region | None = None) -> tuple[float, list[float]]:
    """sup |D_{x'} u| over the region (default |x_beta| <= 1/2, t <= 1/2) and the node attaining it."""
    g = u.grid
    region = inner_region or [(-0.5, 0.5)] * (g.dim - 1) + [(0.0, 0.5)]
    for lo, hi in region[:-1]:
        if lo <= -1 or hi >= 1:
            raise AnalysisError("inner region must stay away from the lateral boundary")
    mask = _region_mask(g, region)
    grads = fd_gradient(u)[:-1]
    mag = np.sqrt(sum(gr.values**2 for gr in grads))
    mag = np.where(mask, mag, -np.inf)
    i = np.unravel_index(int(np.argmax(mag)), g.shape)
    return float(mag[i]), [float(m[i]) for m in g.mesh()]


@dataclass
class LogFactorResult:
    slope: float
    r2: float
    verdict: str
    n_points: int
    excluded: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def detect_log_factor(
    u: ScalarField,
    x0: Sequence[float],
    s: float,
    window: tuple[float, float] | None = None,
    slope_threshold: float = 0.1,
    r2_threshold: float = 0.99,
    flat_tol: float = 0.1,
) -> LogFactorResult:
    """Regress u(x0, t)/t^s on log t.

    "log": |slope| > slope_threshold with R^2 >= r2_threshold (u ~ psi t^s log t);
    "clean": |slope| <= slope_threshold and the fitted trend changes the ratio by
    at most ``flat_tol`` relative to its mean across the window (u ~ psi t^s);
    otherwise "inconclusive".
    """
    if not s > 0:
        raise AnalysisError(f"s must be positive, got {s}")
    g = u.grid
    window = window or default_window(g, 0.2)
    lo, hi = window
    if not (0 < lo < hi <= 0.2):
        raise AnalysisError(f"window must lie in (0, 0.2], got {window}")
    t, v = normal_profile(u, x0)
    inside = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore", under="ignore"):
        ts = t**s
        ratio = v / ts
    usable = inside & (ts > 1e-300) & np.isfinite(ratio)
    excluded = int(inside.sum() - usable.sum())
    if usable.sum() < MIN_FIT_POINTS:
        raise AnalysisError(f"only {usable.sum()} usable levels in window {window}")
    X, Y = np.log(t[usable]), ratio[usable]
    slope, icpt = np.polyfit(X, Y, 1)
    scale = max(float(np.max(np.abs(Y))), 1e-300)  # R^2 is scale free; this avoids overflow
    resid = (Y - (slope * X + icpt)) / scale
    ss_tot = float(np.sum(((Y - Y.mean()) / scale) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    trend = abs(slope) * float(X.max() - X.min()) / max(abs(float(Y.mean())), 1e-300)
    if abs(slope) > slope_threshold and r2 >= r2_threshold:
        verdict = "log"
    elif abs(slope) <= slope_threshold and trend <= flat_tol:
        verdict = "clean"
    else:
        verdict = "inconclusive"
    return LogFactorResult(float(slope), float(r2), verdict, int(usable.sum()), excluded)
