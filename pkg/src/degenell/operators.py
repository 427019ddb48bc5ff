"""The degenerate operator L = t^2 a_ij d_ij + t b_i d_i + c on the half-cube.

Holds the coefficient expressions, the characteristic polynomial
Q(mu) = mu(mu-1) a_nn + mu b_n + c and its roots, the conjugated and shifted
operators used in the regularity arguments, and sparse finite-difference
assembly (optionally regularized by delta * Laplacian).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .exprparse import BinOp, Node, Num, as_node, evaluate_at, free_variables, to_text
from .grid import Grid, ScalarField, make_grid

Coef = Union[Node, str, float, int]
BoundaryData = Union[Mapping[str, np.ndarray], ScalarField]


class OperatorError(ValueError):
    pass


class BoundaryNegativityError(OperatorError):
    """c >= 0 where the boundary condition needs c < 0."""


class NegativityWarning(UserWarning):
    pass


def _is_num(node: Node) -> bool:
    return isinstance(node, Num)


def _add(x: Node, y: Node) -> Node:
    if _is_num(x) and _is_num(y):
        return Num(x.value + y.value)
    if _is_num(y) and y.value == 0:
        return x
    if _is_num(x) and x.value == 0:
        return y
    return BinOp("+", x, y)


def _scale(k: float, x: Node) -> Node:
    if _is_num(x):
        return Num(k * x.value)
    if k == 1:
        return x
    if k == 0:
        return Num(0.0)
    return BinOp("*", Num(k), x)


@dataclass(frozen=True)
class OperatorCoefficients:
    """Coefficient expressions of L; ``a`` is symmetric, index n-1 is the normal direction."""

    n: int
    a: tuple[tuple[Node, ...], ...]
    b: tuple[Node, ...]
    c: Node

    @classmethod
    def build(cls, a: Sequence[Sequence[Coef]], b: Sequence[Coef], c: Coef, n: int) -> OperatorCoefficients:
        if len(a) != n or any(len(row) != n for row in a) or len(b) != n:
            raise OperatorError(f"a must be {n}x{n} and b must have {n} entries")
        A = tuple(tuple(as_node(x, n) for x in row) for row in a)
        for i in range(n):
            for j in range(i + 1, n):
                if A[i][j] != A[j][i] and not _numerically_equal(A[i][j], A[j][i], n):
                    raise OperatorError(f"a is not symmetric: a[{i}][{j}] != a[{j}][{i}]")
        return cls(n, A, tuple(as_node(x, n) for x in b), as_node(c, n))

    @classmethod
    def constant(cls, a_nn: float = 1.0, b_n: float = 0.0, c: float = -1.0, n: int = 2) -> OperatorCoefficients:
        """a = a_nn * identity, b = b_n * e_n, constant c (the model operator)."""
        a = [[a_nn if i == j else 0.0 for j in range(n)] for i in range(n)]
        b = [0.0] * (n - 1) + [b_n]
        return cls.build(a, b, c, n)

    def is_constant(self) -> bool:
        nodes = [x for row in self.a for x in row] + list(self.b) + [self.c]
        return not any(free_variables(x) for x in nodes)

    def sample(self, coords: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate (a, b, c) at broadcastable coordinate arrays (x1, ..., t).

        Returns arrays of shape (n, n, *S), (n, *S), S.
        """
        shape = np.broadcast_shapes(*(np.shape(x) for x in coords))

        def ev(node):
            return np.broadcast_to(evaluate_at(node, coords, self.n), shape)

        a = np.array([[ev(x) for x in row] for row in self.a], dtype=float)
        b = np.array([ev(x) for x in self.b], dtype=float)
        return a, b, np.array(ev(self.c), dtype=float)

    def sample_grid(self, grid: Grid):
        return self.sample(grid.mesh())

    def Q(self, coords: Sequence[np.ndarray], mu):
        """Characteristic polynomial mu(mu-1) a_nn + mu b_n + c at the given points."""
        ann, bn, c = (np.asarray(evaluate_at(x, coords, self.n), dtype=float)
                      for x in (self.a[-1][-1], self.b[-1], self.c))
        return mu * (mu - 1.0) * ann + mu * bn + c

    def describe(self) -> dict:
        return {
            "a": [[to_text(x) for x in row] for row in self.a],
            "b": [to_text(x) for x in self.b],
            "c": to_text(self.c),
        }


def _numerically_equal(x: Node, y: Node, n: int) -> bool:
    rng = np.random.default_rng(12345)
    pts = list(rng.uniform(-1, 1, (n - 1, 64))) + [rng.uniform(0, 1, 64)]
    try:
        vx = evaluate_at(x, pts, n)
        vy = evaluate_at(y, pts, n)
    except ArithmeticError:
        return False
    return bool(np.allclose(vx, vy, rtol=1e-14, atol=1e-14))


def eval_Q(coeffs: OperatorCoefficients, point: Sequence[float], mu: float) -> float:
    return float(coeffs.Q([np.asarray(p, dtype=float) for p in point], mu))


def stable_quadratic_roots(A, B, C) -> tuple[np.ndarray, np.ndarray]:
    """Real roots (lo, hi) of A x^2 + B x + C with A > 0 and A*C < 0.

    The larger-magnitude root comes from the quadratic formula without
    cancellation, the other from the Vieta product C/(A x).
    """
    A, B, C = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (A, B, C)))
    disc = np.sqrt(B * B - 4.0 * A * C)
    sign = np.where(B >= 0, 1.0, -1.0)
    q = -0.5 * (B + sign * disc)
    r1 = q / A
    r2 = C / q
    return np.minimum(r1, r2), np.maximum(r1, r2)


def indicial_roots(coeffs: OperatorCoefficients, boundary_point: Sequence[float]) -> tuple[float, float]:
    """Characteristic exponents (mu_minus, mu_plus) at a point with t = 0."""
    if boundary_point[-1] != 0:
        raise OperatorError("indicial roots are defined at boundary points (t = 0)")
    a, b, c = coeffs.sample([np.asarray(p, dtype=float) for p in boundary_point])
    ann, bn, c = float(a[-1, -1]), float(b[-1]), float(c)
    if not c < 0:
        raise BoundaryNegativityError(f"boundary negativity violated: c = {c} at {tuple(boundary_point)}")
    lo, hi = stable_quadratic_roots(ann, bn - ann, c)
    return float(lo), float(hi)


@dataclass
class CharacteristicReport:
    exponent: float
    boundary_points: np.ndarray
    Q_boundary: np.ndarray
    roots_minus: np.ndarray
    roots_plus: np.ndarray
    c0: float
    c_exponent: float
    c0_boundary: float
    c_exponent_boundary: float
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        rp = self.roots_plus[np.isfinite(self.roots_plus)]
        rm = self.roots_minus[np.isfinite(self.roots_minus)]
        return {
            "exponent": self.exponent,
            "c0": self.c0,
            "c_exponent": self.c_exponent,
            "c0_boundary": self.c0_boundary,
            "c_exponent_boundary": self.c_exponent_boundary,
            "root_plus_range": [float(rp.min()), float(rp.max())] if rp.size else None,
            "root_minus_range": [float(rm.min()), float(rm.max())] if rm.size else None,
            "boundary_samples": int(len(self.boundary_points)),
            "ok": self.ok,
            "failures": list(self.failures),
        }


def verify_conditions(coeffs: OperatorCoefficients, grid: Grid, exponent: float) -> CharacteristicReport:
    """Sample c and Q(exponent) on every node; margins are c0 = -sup c and
    c_exponent = -sup Q(exponent). Also reports the boundary-only margins and
    the pointwise indicial roots on t = 0."""
    if not exponent > 0:
        raise OperatorError(f"exponent must be positive, got {exponent}")
    a, b, c = coeffs.sample_grid(grid)
    ann, bn = a[-1, -1], b[-1]
    Q = exponent * (exponent - 1.0) * ann + exponent * bn + c
    c0, c_exp = -float(np.max(c)), -float(np.max(Q))
    cb, Qb, annb, bnb = c[..., 0], Q[..., 0], ann[..., 0], bn[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        lo, hi = stable_quadratic_roots(annb, bnb - annb, cb)
    neg = cb < 0
    lo, hi = np.where(neg, lo, np.nan), np.where(neg, hi, np.nan)
    failures = []
    if c0 <= 0:
        failures.append(f"sup c = {-c0:.17g} >= 0")
    if c_exp <= 0:
        failures.append(f"sup Q({exponent}) = {-c_exp:.17g} >= 0")
    if np.any(ann <= 0):
        failures.append("a_nn <= 0 somewhere")
    pts = grid.points().reshape(grid.shape + (grid.dim,))[..., 0, :].reshape(-1, grid.dim)
    return CharacteristicReport(
        exponent=float(exponent),
        boundary_points=pts,
        Q_boundary=Qb.ravel(),
        roots_minus=lo.ravel(),
        roots_plus=hi.ravel(),
        c0=c0,
        c_exponent=c_exp,
        c0_boundary=-float(np.max(cb)),
        c_exponent_boundary=-float(np.max(Qb)),
        failures=failures,
    )


def symmetric_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Closed-form eigenvalues of symmetric 2x2 / 3x3 fields a[i, j, ...], ascending.

    The 3x3 trigonometric formula loses about sqrt(machine eps) relative accuracy
    near repeated eigenvalues; diagonal samples are returned exactly.
    """
    n = a.shape[0]
    if n == 2:
        m = 0.5 * (a[0, 0] + a[1, 1])
        r = np.hypot(0.5 * (a[0, 0] - a[1, 1]), a[0, 1])
        return np.stack([m - r, m + r])
    if n != 3:
        raise OperatorError("eigenvalue formula only for n = 2, 3")
    # trigonometric solution of the characteristic cubic
    q = (a[0, 0] + a[1, 1] + a[2, 2]) / 3.0
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    B = (a - q * np.eye(3).reshape((3, 3) + (1,) * (a.ndim - 2))) / safe
    detB = (
        B[0, 0] * (B[1, 1] * B[2, 2] - B[1, 2] * B[2, 1])
        - B[0, 1] * (B[1, 0] * B[2, 2] - B[1, 2] * B[2, 0])
        + B[0, 2] * (B[1, 0] * B[2, 1] - B[1, 1] * B[2, 0])
    )
    phi = np.arccos(np.clip(detB / 2.0, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    ev = np.sort(np.stack([e1, e2, e3]), axis=0)
    diag = np.sort(np.stack([a[0, 0], a[1, 1], a[2, 2]]), axis=0)
    return np.where(p1 > 0, ev, diag)


@dataclass
class EllipticityCertificate:
    lam: float
    Lam: float
    gershgorin_lower: float
    c0: float
    sample_size: int

    @property
    def ok(self) -> bool:
        return self.lam > 0 and self.c0 > 0


def certify(coeffs: OperatorCoefficients, grid: Grid) -> EllipticityCertificate:
    """Ellipticity bounds and boundary-negativity margin sampled at the grid nodes.

    Sub-cell violations between nodes are not detected.
    """
    a, _, c = coeffs.sample_grid(grid)
    ev = symmetric_eigenvalues(a)
    off = np.sum(np.abs(a), axis=1) - np.abs(np.einsum("ii...->i...", a))
    gersh = np.min(np.einsum("ii...->i...", a) - off)
    return EllipticityCertificate(
        lam=float(ev[0].min()),
        Lam=float(ev[-1].max()),
        gershgorin_lower=float(gersh),
        c0=-float(np.max(c)),
        sample_size=grid.n_nodes,
    )


def conjugate_by_power(coeffs: OperatorCoefficients, kappa: float) -> OperatorCoefficients:
    """Coefficients of L_{-kappa} v = t^kappa L(t^{-kappa} v):
    (a_ij, b_i - 2 kappa a_in, Q(-kappa)); its Q satisfies Q'(mu) = Q(mu - kappa)."""
    if kappa == 0:
        return coeffs
    n = coeffs.n
    b = tuple(_add(coeffs.b[i], _scale(-2.0 * kappa, coeffs.a[i][n - 1])) for i in range(n))
    ann, bn = coeffs.a[n - 1][n - 1], coeffs.b[n - 1]
    q = _add(_add(_scale(kappa * (kappa + 1.0), ann), _scale(-kappa, bn)), coeffs.c)
    return OperatorCoefficients(n, coeffs.a, b, q)


def shift_normal_derivative(coeffs: OperatorCoefficients, probe: Grid | None = None) -> OperatorCoefficients:
    """Coefficients of the operator satisfied by d_t u: (a_ij, b_i + 2 a_in, c + b_n).

    Its characteristic polynomial is Q(mu + 1). Warns when the new zeroth-order
    coefficient is not negative on ``probe`` (default: a coarse grid).
    """
    n = coeffs.n
    b = tuple(_add(coeffs.b[i], _scale(2.0, coeffs.a[i][n - 1])) for i in range(n))
    shifted = OperatorCoefficients(n, coeffs.a, b, _add(coeffs.c, coeffs.b[n - 1]))
    probe = probe or make_grid(n, 8, 8, 1.0)
    _, _, c1 = shifted.sample_grid(probe)
    if np.max(c1) >= 0:
        warnings.warn(
            f"shifted operator loses negativity: sup(c + b_n) = {np.max(c1):.6g}",
            NegativityWarning,
            stacklevel=2,
        )
    return shifted


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid
    delta: float

    def write_coo(self, path: str | Path) -> None:
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path: str | Path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
    nrow, ncol = int(header[1]), int(header[2])
    data = np.loadtxt(path, comments="#", ndmin=2)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nrow, ncol))


def operator_matrix(coeffs: OperatorCoefficients, grid: Grid, delta: float = 0.0) -> sp.csr_matrix:
    """Discrete t^2 a_ij d_ij + t b_i d_i + c + delta*Laplacian applied at every node
    (no boundary rows substituted)."""
    a, b, c = coeffs.sample_grid(grid)
    a = 0.5 * (a + np.swapaxes(a, 0, 1))
    t = grid.mesh()[-1].ravel()
    n = grid.dim
    D1 = [grid.global_operator(grid.d1[k], k) for k in range(n)]
    D2 = [grid.global_operator(grid.d2[k], k) for k in range(n)]
    t2 = t * t
    A = sp.diags(c.ravel())
    for i in range(n):
        A = A + sp.diags(t2 * a[i, i].ravel()) @ D2[i] + sp.diags(t * b[i].ravel()) @ D1[i]
        for j in range(i + 1, n):
            A = A + sp.diags(2.0 * t2 * a[i, j].ravel()) @ (D1[i] @ D1[j])
        if delta:
            A = A + delta * D2[i]
    return sp.csr_matrix(A)


def boundary_values(grid: Grid, data: BoundaryData) -> np.ndarray:
    """Nodal array holding the lateral/top Dirichlet data (zeros elsewhere)."""
    out = np.zeros(grid.shape)
    if isinstance(data, ScalarField):
        mask = grid.lateral_top_mask()
        out[mask] = data.values[mask]
        return out
    for name in grid.face_names():
        if name not in data:
            raise OperatorError(f"missing boundary data for face {name!r}")
        sl = grid.face_slice(name)
        face = np.asarray(data[name], dtype=float)
        target = out[sl]
        if face.shape != target.shape:
            raise OperatorError(f"face {name!r}: expected shape {target.shape}, got {face.shape}")
        if not np.all(np.isfinite(face)):
            raise OperatorError(f"face {name!r}: boundary data must be finite")
        out[sl] = face
    return out


def faces_from_field(field: ScalarField) -> dict[str, np.ndarray]:
    g = field.grid
    return {name: field.values[g.face_slice(name)].copy() for name in g.face_names()}


def assemble(
    coeffs: OperatorCoefficients,
    grid: Grid,
    delta: float,
    boundary_data: BoundaryData,
    f: ScalarField | None = None,
) -> LinearSystem:
    """Sparse system for (L + delta*Laplacian) u = f.

    Rows at t = 0: the algebraic identity c u = f when delta = 0 (all
    derivative terms carry a factor t), the Dirichlet condition u = f/c when
    delta > 0. Lateral and top rows: Dirichlet from ``boundary_data``.
    """
    if not delta >= 0:
        raise OperatorError(f"delta must be >= 0, got {delta}")
    if coeffs.n != grid.dim:
        raise OperatorError("coefficient dimension does not match grid")
    fvals = np.zeros(grid.shape) if f is None else f.values
    g = boundary_values(grid, boundary_data)
    _, _, c = coeffs.sample_grid(grid)
    bottom = grid.bottom_mask()
    side = grid.lateral_top_mask() & ~bottom
    cb = c[bottom]
    if np.any(cb == 0):
        raise OperatorError("c vanishes on t = 0; the boundary row is singular")

    A = operator_matrix(coeffs, grid, delta)
    keep = grid.interior_mask().ravel().astype(float)
    diag = np.zeros(grid.shape)
    rhs = np.where(grid.interior_mask(), fvals, 0.0)
    if delta == 0:
        diag[bottom] = cb
        rhs[bottom] = fvals[bottom]
    else:
        diag[bottom] = 1.0
        rhs[bottom] = fvals[bottom] / cb
    diag[side] = 1.0
    rhs[side] = g[side]
    M = sp.diags(keep) @ A + sp.diags(diag.ravel())
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    return LinearSystem(M, rhs.ravel(), grid, float(delta))
