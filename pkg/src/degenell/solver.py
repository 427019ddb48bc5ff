"""Direct and regularized (delta -> 0 continuation) solves of L u = f, u = f/c on t = 0."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import ScalarField
from .operators import (
    BoundaryData,
    LinearSystem,
    OperatorCoefficients,
    OperatorError,
    assemble,
    boundary_values,
    operator_matrix,
    verify_conditions,
)

logger = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class SolveConfig:
    mode: str = "direct"  # direct | continuation | both
    delta0: float = 1.0
    ratio: float = 0.5
    max_steps: int = 25
    linear_tol: float = 1e-12
    stop_tol: float = 1e-8
    linear_solver: str = "auto"  # auto | direct | krylov
    direct_threshold: int = 250_000

    def __post_init__(self):
        if self.mode not in ("direct", "continuation", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.linear_solver not in ("auto", "direct", "krylov"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not (self.linear_tol > 0 and self.stop_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class StepRecord:
    delta: float
    sup_norm: float
    residual: float
    diff: float | None
    method: str


@dataclass
class SolveReport:
    mode: str
    steps: list[StepRecord] = field(default_factory=list)
    step1_bound: float | None = None
    agreement_gap: float | None = None
    converged: bool = True
    flags: list[str] = field(default_factory=list)

    @property
    def step1_ok(self) -> bool:
        return self.step1_bound is None or all(s.sup_norm <= self.step1_bound * (1 + 1e-12) for s in self.steps)

    @property
    def diffs(self) -> list[float]:
        return [s.diff for s in self.steps if s.diff is not None]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "steps": [asdict(s) for s in self.steps],
            "step1_bound": self.step1_bound,
            "step1_ok": self.step1_ok,
            "agreement_gap": self.agreement_gap,
            "converged": self.converged,
            "flags": list(self.flags),
        }


def solve_linear(
    system: LinearSystem, config: SolveConfig, x0: np.ndarray | None = None
) -> tuple[np.ndarray, float, str]:
    """Solve the assembled system; returns (x, relative residual, method).

    Rows are equilibrated by their max-abs entry first: interior rows scale
    like t^2/h^2 while boundary rows are O(1).
    """
    scale = 1.0 / abs(system.matrix).max(axis=1).toarray().ravel()
    A = sp.csr_matrix(sp.diags(scale) @ system.matrix)
    b = scale * system.rhs
    bnorm = max(np.linalg.norm(b), 1e-300)

    def relres(x):
        return float(np.linalg.norm(A @ x - b) / bnorm)

    method = config.linear_solver
    if method == "auto":
        method = "direct" if A.shape[0] < config.direct_threshold else "krylov"
    history: list[float] = []
    if method == "krylov":
        try:
            ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-5, fill_factor=10)
            prec = spla.LinearOperator(A.shape, ilu.solve)
            x, info = spla.gmres(
                A, b, x0=x0, M=prec, rtol=config.linear_tol, atol=0.0, restart=50, maxiter=40,
                callback=history.append, callback_type="pr_norm",
            )
            r = relres(x)
            if info == 0 and r <= 10 * config.linear_tol:
                return x, r, "gmres+ilu"
            logger.warning("GMRES stopped with info=%s residual=%.3e; falling back to sparse LU", info, r)
        except RuntimeError as exc:
            logger.warning("ILU preconditioner failed (%s); falling back to sparse LU", exc)
    try:
        x = spla.splu(sp.csc_matrix(A)).solve(b)
    except RuntimeError as exc:
        raise NumericalFailure(f"sparse LU failed: {exc}", history) from exc
    r = relres(x)
    if not np.all(np.isfinite(x)) or r > 1e3 * config.linear_tol:
        raise NumericalFailure(f"linear solve residual {r:.3e} above tolerance", history + [r])
    return x, r, "splu"


def _check_admissible(coeffs: OperatorCoefficients, f: ScalarField) -> float:
    rep = verify_conditions(coeffs, f.grid, 1e-3)
    if rep.c0 <= 0:
        raise OperatorError(f"c must be negative on the closed domain (sup c = {-rep.c0:.6g})")
    return rep.c0


def _step1_bound(f: ScalarField, g: np.ndarray, c0: float) -> float:
    return f.sup() / c0 + float(np.max(np.abs(g)))


def solve_direct(
    coeffs: OperatorCoefficients,
    f: ScalarField,
    boundary: BoundaryData,
    config: SolveConfig = SolveConfig(),
) -> tuple[ScalarField, SolveReport]:
    grid = f.grid
    c0 = _check_admissible(coeffs, f)
    system = assemble(coeffs, grid, 0.0, boundary, f)
    x, res, method = solve_linear(system, config)
    u = ScalarField(grid, x)
    report = SolveReport(mode="direct", step1_bound=_step1_bound(f, boundary_values(grid, boundary), c0))
    report.steps.append(StepRecord(0.0, u.sup(), res, None, method))
    return u, report


def solve_continuation(
    coeffs: OperatorCoefficients,
    f: ScalarField,
    boundary: BoundaryData,
    config: SolveConfig = SolveConfig(),
) -> tuple[ScalarField, SolveReport]:
    """Solve (L + delta_k Laplacian) u = f, u = f/c on t = 0, for delta_k = delta0 * ratio^k,
    warm-starting each step from the previous one."""
    grid = f.grid
    c0 = _check_admissible(coeffs, f)
    report = SolveReport(mode="continuation", step1_bound=_step1_bound(f, boundary_values(grid, boundary), c0))
    prev = None
    report.converged = False
    for k in range(config.max_steps):
        delta = config.delta0 * config.ratio**k
        system = assemble(coeffs, grid, delta, boundary, f)
        x, res, method = solve_linear(system, config, x0=prev)
        diff = None if prev is None else float(np.max(np.abs(x - prev)))
        report.steps.append(StepRecord(delta, float(np.max(np.abs(x))), res, diff, method))
        logger.debug("delta=%.3e sup=%.6g diff=%s", delta, report.steps[-1].sup_norm, diff)
        prev = x
        if diff is not None and diff < config.stop_tol:
            report.converged = True
            break
    # early steps legitimately grow while delta is still large; only the tail must contract
    tail = report.diffs[-5:]
    if any(b > a and b > config.stop_tol for a, b in zip(tail, tail[1:])):
        report.flags.append("non-monotone successive differences in the last steps")
    if not report.converged:
        report.flags.append("continuation stopped at max_steps before reaching stop_tol")
    return ScalarField(grid, prev), report


def solve(
    coeffs: OperatorCoefficients,
    f: ScalarField,
    boundary: BoundaryData,
    config: SolveConfig = SolveConfig(),
) -> tuple[ScalarField, SolveReport]:
    """Dispatch on ``config.mode``; 'both' returns the direct solution with the
    continuation agreement gap recorded."""
    if config.mode == "continuation":
        return solve_continuation(coeffs, f, boundary, config)
    try:
        u, report = solve_direct(coeffs, f, boundary, config)
    except NumericalFailure as exc:
        logger.warning("direct solve failed (%s); falling back to continuation", exc)
        u, report = solve_continuation(coeffs, f, boundary, config)
        report.flags.append(f"direct mode failed: {exc}")
        return u, report
    if config.mode == "both":
        uc, rc = solve_continuation(coeffs, f, boundary, config)
        report.mode = "both"
        report.steps += rc.steps
        report.flags += rc.flags
        report.converged = rc.converged
        report.agreement_gap = float(np.max(np.abs(u.values - uc.values)))
    return u, report


def residual(coeffs: OperatorCoefficients, u: ScalarField, f: ScalarField) -> ScalarField:
    """|t^2 a_ij d_ij u + t b_i d_i u + c u - f| at interior nodes, 0 on boundary rows."""
    grid = u.grid
    Lu = operator_matrix(coeffs, grid) @ u.flat
    r = np.abs(Lu.reshape(grid.shape) - f.values)
    return ScalarField(grid, np.where(grid.interior_mask(), r, 0.0))
