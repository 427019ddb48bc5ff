"""Exact (u, f) pairs for the model operator L = a t^2 Laplacian + b t d_t + c.

With the flat defining function rho = t we have |grad rho| = 1 and
Laplacian(rho) = 0 everywhere, so the closed forms below are exact:

    monomial:  u = psi t^s,        f = t^{s+1} [(2as+b) d_t psi + a t Lap psi]
    log/mixed: u = psi t^s log t,  f = t^{s+1} log t [(2as+b) d_t psi + a t Lap psi]
                                       + t^s [(a(2s-1)+b) psi + 2a t d_t psi]

where c is fixed by the root condition a s(s-1) + b s + c = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exprparse import Node, as_node, evaluate_at, polynomial_degree, to_text, variables_for
from .grid import Grid, ScalarField
from .operators import OperatorCoefficients

CASES = ("monomial", "log", "mixed")


class RootConditionError(ValueError):
    pass


class RootConditionWarning(UserWarning):
    pass


def root_condition_c(a: float, b: float, s: float) -> float:
    """The c making s a root of a mu(mu-1) + b mu + c."""
    if not (a > 0 and s > 0):
        raise ValueError(f"need a > 0 and s > 0, got a={a}, s={s}")
    c = -(a * s * (s - 1.0) + b * s)
    if c >= 0:
        warnings.warn(f"root condition gives c = {c} >= 0; the boundary value f/c is undefined",
                      RootConditionWarning, stacklevel=2)
    return c


def psi_derivatives(psi: Node, coords: Sequence[np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    """(d_t psi, Laplacian psi) at ``coords``.

    Central differences are exact on quadratics, so polynomials of degree <= 2
    use a unit step (rounding error only); anything else gets Richardson
    extrapolated central differences, O(h^4) with h = 1e-2.
    """
    coords = [np.asarray(x, dtype=float) for x in coords]
    deg = polynomial_degree(psi)
    exact = deg is not None and deg <= 2
    h = 1.0 if exact else 1e-2

    def ev(pts):
        return np.asarray(evaluate_at(psi, pts, n), dtype=float)

    def central(axis, step):
        up = list(coords)
        dn = list(coords)
        up[axis] = coords[axis] + step
        dn[axis] = coords[axis] - step
        fu, fd, f0 = ev(up), ev(dn), ev(coords)
        return (fu - fd) / (2 * step), (fu - 2 * f0 + fd) / step**2

    def richardson(axis):
        d1h, d2h = central(axis, h)
        if exact:
            return d1h, d2h
        d1q, d2q = central(axis, h / 2)
        return (4 * d1q - d1h) / 3, (4 * d2q - d2h) / 3

    dt, _ = richardson(n - 1)
    lap = sum(richardson(k)[1] for k in range(n))
    shape = np.broadcast_shapes(*(x.shape for x in coords))
    return np.broadcast_to(dt, shape), np.broadcast_to(lap, shape)


@dataclass(frozen=True)
class ManufacturedCase:
    tag: str
    a: float
    b: float
    c: float
    s: float
    psi: Node
    n: int = 2

    def __post_init__(self):
        if self.tag not in CASES:
            raise ValueError(f"unknown case {self.tag!r}; expected one of {CASES}")
        if not (self.a > 0 and self.s > 0):
            raise ValueError("need a > 0 and s > 0")
        defect = self.a * self.s * (self.s - 1) + self.b * self.s + self.c
        if abs(defect) >= 1e-12:
            raise RootConditionError(f"root condition violated: a s(s-1) + b s + c = {defect:.3e}")

    @property
    def mixed_coefficient(self) -> float:
        """a(2s-1) + b, the factor of the non-logarithmic t^s psi term in f."""
        return self.a * (2 * self.s - 1) + self.b

    def coefficients(self) -> OperatorCoefficients:
        return OperatorCoefficients.constant(self.a, self.b, self.c, self.n)

    def psi_values(self, coords):
        shape = np.broadcast_shapes(*(np.shape(x) for x in coords))
        return np.broadcast_to(evaluate_at(self.psi, coords, self.n), shape)

    def u(self, coords) -> np.ndarray:
        t = np.asarray(coords[-1], dtype=float)
        psi = self.psi_values(coords)
        ts = t**self.s
        if self.tag == "monomial":
            return psi * ts
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(t > 0, ts * np.log(np.where(t > 0, t, 1.0)), 0.0)
        return psi * g

    def f(self, coords) -> np.ndarray:
        a, b, s = self.a, self.b, self.s
        t = np.asarray(coords[-1], dtype=float)
        psi = self.psi_values(coords)
        dt, lap = psi_derivatives(self.psi, coords, self.n)
        smooth = t ** (s + 1) * ((2 * a * s + b) * dt + a * t * lap)
        if self.tag == "monomial":
            return smooth
        logt = np.log(np.where(t > 0, t, 1.0))
        return np.where(t > 0, smooth * logt, 0.0) + t**s * ((a * (2 * s - 1) + b) * psi + 2 * a * t * dt)

    def u0(self, *xprime) -> np.ndarray:
        """Boundary value f/c on t = 0, called as u0(x1) or u0(x1, x2)."""
        coords = [np.asarray(x, dtype=float) for x in xprime] + [np.zeros(np.shape(xprime[0]))]
        return self.f(coords) / self.c

    def fields(self, grid: Grid) -> tuple[ScalarField, ScalarField]:
        if grid.dim != self.n:
            raise ValueError("grid dimension does not match the case")
        mesh = grid.mesh()
        return ScalarField(grid, self.u(mesh)), ScalarField(grid, self.f(mesh))

    def u_function(self) -> Callable[..., np.ndarray]:
        return lambda *coords: self.u(coords)

    def to_dict(self) -> dict:
        return {
            "case": self.tag,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "s": self.s,
            "psi": to_text(self.psi),
            "n": self.n,
            "mixed_coefficient": self.mixed_coefficient,
            "variables": list(variables_for(self.n)),
        }


def make_case(tag: str, a: float, b: float, s: float, psi: Node | str | float = 1.0, n: int = 2) -> ManufacturedCase:
    if tag == "log" and s != int(s):
        raise ValueError(f"the log case needs integer s (use 'mixed' for non-integer), got {s}")
    if tag in ("log", "mixed") and s == 0:
        raise ValueError("s = 0 makes u unbounded")
    if tag == "monomial" and s == int(s):
        warnings.warn(f"monomial case with integer s = {s}: u = psi t^s is smooth", stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RootConditionWarning)
        c = root_condition_c(a, b, s)
    if c >= 0:
        warnings.warn(f"c = {c} >= 0 violates boundary negativity", RootConditionWarning, stacklevel=2)
    return ManufacturedCase(tag, float(a), float(b), c, float(s), as_node(psi, n), n)


def case1_pair(a: float, b: float, s: float, psi, grid: Grid) -> tuple[ScalarField, ScalarField]:
    return make_case("monomial", a, b, s, psi, grid.dim).fields(grid)


def case2_pair(a: float, b: float, s: float, psi, grid: Grid) -> tuple[ScalarField, ScalarField]:
    tag = "log" if s == int(s) else "mixed"
    return make_case(tag, a, b, s, psi, grid.dim).fields(grid)


def exact_normal_trace(case: ManufacturedCase) -> Callable[..., np.ndarray] | None:
    """d_t u on t = 0 as a function of x', or None where it does not exist."""

    def zero(*xprime):
        return np.zeros(np.broadcast_shapes(*(np.shape(x) for x in xprime)))

    if case.s > 1:
        return zero
    if case.tag == "monomial" and math.isclose(case.s, 1.0, rel_tol=0, abs_tol=1e-15):
        return lambda *xprime: case.psi_values(list(xprime) + [np.zeros(np.shape(xprime[0]))])
    # s < 1, or s = 1 with a log factor: d_t u blows up unless psi(., 0) = 0
    return None
