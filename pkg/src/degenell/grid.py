"""Tensor-product meshes on the half-cube G = [-1, 1]^(n-1) x [0, 1] and
finite-difference calculus on them.

Axes are ordered tangential first (x1, ..., x_{n-1}) and normal last (t).
Nodal arrays have shape ``(N+1,) * (n-1) + (M+1,)`` so that C-order
flattening enumerates nodes lexicographically by (tangential indices,
normal index).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    pass


def fd_weights(nodes: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Weights w with sum(w * f(nodes)) ~ f^(order)(x0), exact on polynomials
    of degree < len(nodes)."""
    nodes = np.asarray(nodes, dtype=float)
    k = len(nodes)
    # scale to unit size so the Vandermonde system stays well conditioned
    h = np.max(np.abs(nodes - x0))
    z = (nodes - x0) / h
    V = np.vander(z, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs) / h**order


def first_derivative_matrix(x: np.ndarray) -> sp.csr_matrix:
    """Three-point first derivative: central in the interior, one-sided at the ends."""
    m = len(x)
    if m < 3:
        raise GridError("need at least 3 nodes per axis")
    rows, cols, vals = [], [], []
    for i in range(m):
        if i == 0:
            idx = [0, 1, 2]
        elif i == m - 1:
            idx = [m - 3, m - 2, m - 1]
        else:
            idx = [i - 1, i, i + 1]
        w = fd_weights(x[idx], x[i], 1)
        rows += [i] * 3
        cols += idx
        vals += list(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def second_derivative_matrix(x: np.ndarray) -> sp.csr_matrix:
    """Three-point second derivative in the interior, four-point one-sided at
    the ends (second order on smoothly graded meshes)."""
    m = len(x)
    if m < 4:
        raise GridError("need at least 4 nodes per axis")
    rows, cols, vals = [], [], []
    for i in range(m):
        if i == 0:
            idx = [0, 1, 2, 3]
        elif i == m - 1:
            idx = [m - 4, m - 3, m - 2, m - 1]
        else:
            idx = [i - 1, i, i + 1]
        w = fd_weights(x[idx], x[i], 2)
        rows += [i] * len(idx)
        cols += idx
        vals += list(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


@dataclass(frozen=True, eq=False)
class Grid:
    dim: int
    N: int
    M: int
    gamma: float
    tangential_coords: tuple[np.ndarray, ...]
    normal_coords: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N + 1,) * (self.dim - 1) + (self.M + 1,)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return self.tangential_coords + (self.normal_coords,)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays (x1, ..., t), each of full grid shape."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def points(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    @cached_property
    def d1(self) -> tuple[sp.csr_matrix, ...]:
        return tuple(first_derivative_matrix(x) for x in self.axes)

    @cached_property
    def d2(self) -> tuple[sp.csr_matrix, ...]:
        return tuple(second_derivative_matrix(x) for x in self.axes)

    def global_operator(self, mat1d: sp.spmatrix, axis: int) -> sp.csr_matrix:
        """Lift a 1D operator on ``axis`` to the flattened node vector."""
        ops = [sp.identity(s, format="csr") for s in self.shape]
        ops[axis] = sp.csr_matrix(mat1d)
        out = ops[0]
        for op in ops[1:]:
            out = sp.kron(out, op, format="csr")
        return out

    def bottom_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[..., 0] = True
        return mask

    def lateral_top_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[..., -1] = True
        for ax in range(self.dim - 1):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~(self.bottom_mask() | self.lateral_top_mask())

    def face_names(self) -> list[str]:
        names = ["top"]
        for ax in range(self.dim - 1):
            names += [f"x{ax + 1}-", f"x{ax + 1}+"]
        return names

    def face_slice(self, name: str) -> tuple:
        sl: list = [slice(None)] * self.dim
        if name == "top":
            sl[-1] = -1
        elif name == "bottom":
            sl[-1] = 0
        else:
            ax = int(name[1:-1]) - 1
            if not 0 <= ax < self.dim - 1 or name[-1] not in "+-":
                raise GridError(f"unknown face {name!r}")
            sl[ax] = -1 if name[-1] == "+" else 0
        return tuple(sl)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "gamma": self.gamma, "N": self.N, "M": self.M}

    def refined(self) -> Grid:
        return make_grid(self.dim, 2 * self.N, 2 * self.M, self.gamma)


def make_grid(n: int, N_tangential: int, M_normal: int, gamma: float = 2.0) -> Grid:
    """Grid on [-1, 1]^(n-1) x [0, 1] with normal levels t_j = (j/M)^gamma."""
    if n not in (2, 3):
        raise GridError(f"dimension must be 2 or 3, got {n}")
    if N_tangential < 4 or M_normal < 4:
        raise GridError(f"need N, M >= 4, got N={N_tangential}, M={M_normal}")
    if not gamma >= 1.0:
        # gamma < 1 coarsens the mesh toward the degenerate boundary
        raise GridError(f"grading exponent must be >= 1, got {gamma}")
    x = np.linspace(-1.0, 1.0, N_tangential + 1)
    t = (np.arange(M_normal + 1) / M_normal) ** gamma
    t[0], t[-1] = 0.0, 1.0
    return Grid(
        dim=n,
        N=N_tangential,
        M=M_normal,
        gamma=float(gamma),
        tangential_coords=tuple(x.copy() for _ in range(n - 1)),
        normal_coords=t,
    )


def grid_from_dict(d: dict) -> Grid:
    return make_grid(int(d["dim"]), int(d["N"]), int(d["M"]), float(d["gamma"]))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.n_nodes:
            raise GridError(f"field has {v.size} values, grid has {self.grid.n_nodes} nodes")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> ScalarField:
        """``fn`` receives coordinate arrays (x1, ..., t) of full grid shape."""
        vals = np.broadcast_to(np.asarray(fn(*grid.mesh()), dtype=float), grid.shape)
        return cls(grid, vals.copy())

    @classmethod
    def constant(cls, grid: Grid, value: float) -> ScalarField:
        return cls(grid, np.full(grid.shape, float(value)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __sub__(self, other: ScalarField) -> ScalarField:
        return ScalarField(self.grid, self.values - other.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _apply_along(mat: sp.spmatrix, values: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    shp = moved.shape
    out = mat @ moved.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape(shp), 0, axis)


def fd_gradient(field: ScalarField) -> list[ScalarField]:
    g = field.grid
    return [ScalarField(g, _apply_along(g.d1[k], field.values, k)) for k in range(g.dim)]


def fd_hessian(field: ScalarField) -> list[list[ScalarField]]:
    g = field.grid
    H: list[list] = [[None] * g.dim for _ in range(g.dim)]
    first = [_apply_along(g.d1[k], field.values, k) for k in range(g.dim)]
    for i in range(g.dim):
        H[i][i] = ScalarField(g, _apply_along(g.d2[i], field.values, i))
        for j in range(i + 1, g.dim):
            mixed = ScalarField(g, _apply_along(g.d1[i], first[j], i))
            H[i][j] = H[j][i] = mixed
    return H


def _locate(axis: np.ndarray, x: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    tol = 1e-12
    if np.any(x < axis[0] - tol) or np.any(x > axis[-1] + tol):
        raise GridError(f"point outside domain along {name}")
    x = np.clip(x, axis[0], axis[-1])
    i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2)
    w = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, w


def interpolate_many(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at an (m, n) array of points."""
    g = field.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != g.dim:
        raise GridError(f"points must have {g.dim} coordinates")
    names = [f"x{k + 1}" for k in range(g.dim - 1)] + ["t"]
    located = [_locate(ax, pts[:, k], names[k]) for k, ax in enumerate(g.axes)]
    out = np.zeros(len(pts))
    for corner in np.ndindex(*(2,) * g.dim):
        weight = np.ones(len(pts))
        idx = []
        for k, bit in enumerate(corner):
            i, w = located[k]
            weight = weight * (w if bit else 1.0 - w)
            idx.append(i + bit)
        out += weight * field.values[tuple(idx)]
    return out


def interpolate(field: ScalarField, point: Sequence[float]) -> float:
    return float(interpolate_many(field, np.asarray(point, dtype=float)[None, :])[0])


def coordinate_names(dim: int) -> list[str]:
    return [f"x{k + 1}" for k in range(dim - 1)] + ["t"]


def write_grid_json(path: str | Path, grid: Grid) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=2))


def read_grid_json(path: str | Path) -> Grid:
    return grid_from_dict(json.loads(Path(path).read_text()))


def write_field_csv(path: str | Path, field: ScalarField) -> None:
    pts = field.grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coordinate_names(field.grid.dim) + ["value"])
        for p, v in zip(pts, field.flat):
            w.writerow([f"{c:.17g}" for c in p] + [f"{v:.17g}"])


def read_field_csv(path: str | Path, grid: Grid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (grid.n_nodes, grid.dim + 1):
        raise GridError(f"{path}: expected {grid.n_nodes} rows of {grid.dim + 1} columns")
    if not np.allclose(data[:, :-1], grid.points(), rtol=0, atol=1e-12):
        raise GridError(f"{path}: node coordinates do not match the grid")
    return ScalarField(grid, data[:, -1])
