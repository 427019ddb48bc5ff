"""The ten quantitative acceptance checks, runnable individually or as a suite."""

from __future__ import annotations

import math
import random
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import analysis
from .barriers import barrier_sample, construct_barrier, verify_barrier
from .exprparse import ExprError, evaluate, parse
from .grid import ScalarField, make_grid
from .manufactured import make_case
from .operators import (
    OperatorCoefficients,
    conjugate_by_power,
    eval_Q,
    faces_from_field,
    indicial_roots,
    shift_normal_derivative,
)
from .solver import SolveConfig, solve_continuation, solve_direct


@dataclass(frozen=True)
class AcceptanceConfig:
    seed: int = 0
    gamma: float = 2.0
    coarse: tuple[int, int] = (64, 128)
    fine: tuple[int, int] = (128, 256)
    root_tol: float = 1e-12
    constant_tol: float = 1e-9
    convergence_ratio_min: float = 3.0
    smooth_region_t: float = 0.1
    decay_exponent_tol: float = 0.05
    decay_r2_min: float = 0.999
    weighted_exponent_tol: float = 0.1
    weighted_trace_max: float = 0.05
    log_slope_tol: float = 0.05
    trace_tol: float = 1e-3
    barrier_tangential: int = 64
    barrier_normal: int = 1600
    barrier_t_min: float = 1e-8
    continuation_max_steps: int = 40
    agreement_tol: float = 1e-6
    identity_samples: int = 1000
    identity_tol: float = 1e-12
    parser_fuzz: int = 10_000
    runtime_limits: dict[int, float] = field(
        default_factory=lambda: {1: 1.0, 2: 5.0, 3: 60.0, 7: 30.0, 9: 1.0}
    )

    @classmethod
    def from_dict(cls, d: dict) -> AcceptanceConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown acceptance settings: {sorted(unknown)}")
        d = dict(d)
        for key in ("coarse", "fine"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        if "runtime_limits" in d:
            d["runtime_limits"] = {int(k): float(v) for k, v in d["runtime_limits"].items()}
        return replace(cls(), **d)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict
    runtime: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} criterion {self.number:2d} {self.name} ({self.runtime:.2f} s)"

    def to_dict(self) -> dict:
        return asdict(self)


class _Context:
    """Solutions shared between criteria 3, 4 and 8."""

    def __init__(self, cfg: AcceptanceConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def manufactured(self, size: tuple[int, int]):
        if size not in self._cache:
            grid = make_grid(2, size[0], size[1], self.cfg.gamma)
            case = make_case("monomial", 1.0, 0.0, 1.5, "1 + t")
            u_exact, f = case.fields(grid)
            u, report = solve_direct(case.coefficients(), f, faces_from_field(u_exact))
            self._cache[size] = (case, u_exact, f, u, report)
        return self._cache[size]


def _le(x, tol) -> bool:
    return bool(x <= tol)


def criterion_1(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    detail = {}
    ok = True
    for (a, b, c), expected in (((1.0, 0.0, -0.75), (-0.5, 1.5)), ((1.0, 1.0, -1.0), (-1.0, 1.0))):
        roots = indicial_roots(OperatorCoefficients.constant(a, b, c), (0.0, 0.0))
        err = max(abs(r - e) for r, e in zip(roots, expected))
        detail[f"a={a},b={b},c={c}"] = {"roots": roots, "error": err}
        ok &= _le(err, cfg.root_tol)
    return ok, detail


ADMISSIBLE_A = (
    [["1", "0"], ["0", "1"]],
    [["2 + sin(x1)", "0.3*t"], ["0.3*t", "1 + t^2"]],
    [["1 + x1^2", "0.5"], ["0.5", "2 - t"]],
)


def criterion_2(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    grid = make_grid(2, *cfg.fine, cfg.gamma)
    f = ScalarField.constant(grid, -1.0)
    one = ScalarField.constant(grid, 1.0)
    scfg = SolveConfig(max_steps=cfg.continuation_max_steps)
    detail, ok = {}, True
    for a in ADMISSIBLE_A:
        coeffs = OperatorCoefficients.build(a, ["0.5*x1", "t"], "-1", 2)
        u_d, _ = solve_direct(coeffs, f, faces_from_field(one), scfg)
        u_c, _ = solve_continuation(coeffs, f, faces_from_field(one), scfg)
        errs = ((u_d - one).sup(), (u_c - one).sup())
        detail[str(a)] = {"direct": errs[0], "continuation": errs[1]}
        ok &= _le(max(errs), cfg.constant_tol)
    return ok, detail


def criterion_3(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    errors = []
    for size in (cfg.coarse, cfg.fine):
        _, u_exact, _, u, _ = ctx.manufactured(size)
        smooth = u.grid.mesh()[-1] >= cfg.smooth_region_t
        errors.append(float(np.max(np.abs(u.values - u_exact.values)[smooth])))
    ratio = errors[0] / errors[1]
    case, _, _, u, _ = ctx.manufactured(cfg.fine)
    fit = analysis.fit_boundary_decay(u, case.u0, [0.0])
    ok = (ratio >= cfg.convergence_ratio_min
          and _le(abs(fit.exponent - 1.5), cfg.decay_exponent_tol)
          and fit.r2 >= cfg.decay_r2_min)
    return ok, {"sup_errors": errors, "ratio": ratio, "decay": fit.to_dict()}


def criterion_4(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    _, _, _, u, _ = ctx.manufactured(cfg.fine)
    d1, d2 = analysis.weighted_derivative_decay(u, [0.0])
    t_min, w1, w2 = analysis.weighted_traces(u, [0.0])
    ok = (_le(abs(d1.exponent - 1.5), cfg.weighted_exponent_tol)
          and _le(abs(d2.exponent - 1.5), cfg.weighted_exponent_tol)
          and _le(w1, cfg.weighted_trace_max) and _le(w2, cfg.weighted_trace_max))
    return ok, {"t_Du": d1.to_dict(), "t2_D2u": d2.to_dict(), "t_min": t_min, "trace_t_Du": w1, "trace_t2_D2u": w2}


def criterion_5(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    grid = make_grid(2, *cfg.fine, cfg.gamma)
    t_log_t, _ = make_case("log", 1.0, 1.0, 1.0).fields(grid)
    r_log = analysis.detect_log_factor(t_log_t, [0.0], 1.0)
    t_15 = ScalarField.from_function(grid, lambda x, t: t**1.5 + 0 * x)
    r_clean = analysis.detect_log_factor(t_15, [0.0], 1.5)
    ok = r_log.verdict == "log" and _le(abs(r_log.slope - 1.0), cfg.log_slope_tol) and r_clean.verdict == "clean"
    sweep = {}
    misclassified = 0
    for s in (0.5, 1.0, 1.5, 2.0, 2.5):
        integer = s == int(s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            case = make_case("log" if integer else "monomial", 1.0, 1.0, s)
        u, _ = case.fields(grid)
        verdict = analysis.detect_log_factor(u, [0.0], s).verdict
        expected = "log" if integer else "clean"
        misclassified += verdict != expected
        sweep[str(s)] = {"expected": expected, "verdict": verdict}
    ok &= misclassified == 0
    return ok, {"t_log_t": r_log.to_dict(), "t_1.5": r_clean.to_dict(), "sweep": sweep,
                "misclassified": misclassified}


def criterion_6(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    grid = make_grid(2, *cfg.fine, cfg.gamma)
    coeffs = OperatorCoefficients.build([["1", "0"], ["0", "1"]], ["0", "0"], "-3", 2)
    u_exact = ScalarField.from_function(grid, lambda x, t: 1 + t + 0 * x)
    f = ScalarField.from_function(grid, lambda x, t: -3 * (1 + t) + 0 * x)
    u, _ = solve_direct(coeffs, f, faces_from_field(u_exact))
    linear = analysis.normal_trace_check(coeffs, u, f)
    case = make_case("monomial", 1.0, 0.0, 2.5, "1 + t")
    ue, fe = case.fields(grid)
    u25, _ = solve_direct(case.coefficients(), fe, faces_from_field(ue))
    high = analysis.normal_trace_check(case.coefficients(), u25, fe)
    formula_max = float(np.max(np.abs(high.u1)))
    fd_max = float(np.max(np.abs(high.fd_trace)))
    ok = _le(linear.discrepancy, cfg.trace_tol) and _le(formula_max, cfg.trace_tol) and _le(fd_max, cfg.trace_tol)
    return ok, {"one_plus_t": linear.to_dict(), "s2.5_formula_max": formula_max, "s2.5_fd_max": fd_max}


def criterion_7(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    coeffs = OperatorCoefficients.constant(1.0, 0.0, -1.0, 2)
    sample = barrier_sample(2, cfg.barrier_tangential, cfg.barrier_normal, cfg.barrier_t_min)
    detail, ok = {}, len(sample) >= 100_000
    for sigma, mu in ((0.0, 0.5), (0.5, 1.0)):
        cert = verify_barrier(coeffs, construct_barrier(coeffs, sigma, mu), sample)
        detail[f"sigma={sigma},mu={mu}"] = {k: v for k, v in cert.to_dict().items() if k != "derivation"}
        ok &= cert.passed and cert.t_min <= 1e-8 * (1 + 1e-12)
    detail["sample_size"] = len(sample)
    return ok, detail


def criterion_8(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    scfg = SolveConfig(mode="continuation", max_steps=cfg.continuation_max_steps)
    problems = {}
    grid = make_grid(2, *cfg.fine, cfg.gamma)
    const = OperatorCoefficients.build(ADMISSIBLE_A[1], ["0.5*x1", "t"], "-1", 2)
    f = ScalarField.constant(grid, -1.0)
    one = ScalarField.constant(grid, 1.0)
    problems["constant"] = (const, f, faces_from_field(one), solve_direct(const, f, faces_from_field(one))[0])
    case, u_exact, f3, u3, _ = ctx.manufactured(cfg.fine)
    problems["manufactured"] = (case.coefficients(), f3, faces_from_field(u_exact), u3)
    detail, ok = {}, True
    for name, (coeffs, rhs, bdry, u_direct) in problems.items():
        u_c, rep = solve_continuation(coeffs, rhs, bdry, scfg)
        gap = float(np.max(np.abs(u_c.values - u_direct.values)))
        tail = rep.diffs[-5:]
        # an exactly reproduced solution stops changing: zero differences count as decreasing
        decreasing = all(b < a or a == b == 0.0 for a, b in zip(tail, tail[1:]))
        detail[name] = {"steps": len(rep.steps), "step1_bound": rep.step1_bound, "step1_ok": rep.step1_ok,
                        "max_sup_norm": max(s.sup_norm for s in rep.steps), "agreement_gap": gap,
                        "last_diffs": tail, "tail_decreasing": decreasing, "converged": rep.converged}
        ok &= rep.step1_ok and _le(gap, cfg.agreement_tol) and decreasing
    return ok, detail


IDENTITY_OPERATOR = (
    [["2 + sin(x1)", "0.3*t*x1"], ["0.3*t*x1", "1 + t^2"]],
    ["cos(x1)", "1 - 2*t"],
    "-2 - x1^2 + 0.5*t",
)


def criterion_9(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    rng = np.random.default_rng(cfg.seed)
    coeffs = OperatorCoefficients.build(*IDENTITY_OPERATOR, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        shifted = shift_normal_derivative(coeffs)
    m = cfg.identity_samples
    x1, t = rng.uniform(-1, 1, m), rng.uniform(0, 1, m)
    mu, kappa = rng.uniform(-3, 3, m), rng.uniform(-2, 2, m)
    worst_shift = float(np.max(np.abs(shifted.Q([x1, t], mu) - coeffs.Q([x1, t], mu + 1))))
    worst_conj = 0.0
    for k in range(m):
        point = (x1[k], t[k])
        conj = conjugate_by_power(coeffs, float(kappa[k]))
        worst_conj = max(worst_conj, abs(eval_Q(conj, point, mu[k]) - eval_Q(coeffs, point, mu[k] - kappa[k])))
    ok = _le(worst_shift, cfg.identity_tol) and _le(worst_conj, cfg.identity_tol)
    return ok, {"shift_max_error": worst_shift, "conjugation_max_error": worst_conj, "samples": cfg.identity_samples}


# (text, t, expected); x1 = 3 in every case
PRECEDENCE_CASES: tuple[tuple[str, float, float], ...] = (
    ("1 + 2 * 3", 0, 7), ("(1 + 2) * 3", 0, 9), ("2 ^ 3 ^ 2", 0, 512), ("(2 ^ 3) ^ 2", 0, 64),
    ("-t^2", 2, -4), ("(-t)^2", 2, 4), ("1 - 2^2", 0, -3), ("8 / 4 / 2", 0, 1),
    ("8 - 4 - 2", 0, 2), ("2 * 3 ^ 2", 0, 18), ("-2 ^ 2", 0, -4), ("2 ^ -1", 0, 0.5),
    ("- -3", 0, 3), ("1 - -1", 0, 2), ("x1 * t + 1", 2, 7), ("x1 * (t + 1)", 2, 9),
    ("2 * -x1", 0, -6), ("t / 2 * 4", 2, 4), ("t / (2 * 4)", 2, 0.25), ("x1 ^ 2 ^ 0", 0, 3),
    ("1 + 2 - 3 + 4", 0, 4), ("2 * 3 / 6 * 2", 0, 2), ("sqrt(16) + 1", 0, 5), ("exp(0) * 3", 0, 3),
    ("log(1) - 2", 0, -2), ("abs(-x1) ^ 2", 0, 9), ("-abs(-2)", 0, -2), ("((1))", 0, 1),
    ("1e2 / 1e1", 0, 10), (".5 * 4", 0, 2), ("2 ^ 2 * 3", 0, 12), ("-x1 + t", 5, 2),
    ("cos(0) - sin(0)", 0, 1), ("t ^ 0.5 ^ 2", 16, 2),
)

_FUZZ_ALPHABET = ("1", "2.5", "1e3", "t", "x1", "x2", "sin", "log", "sqrt", "(", ")", "+", "-", "*", "/",
                  "^", ",", " ", ".", "e", "#", "foo", "é", "√")


def fuzz_inputs(count: int, seed: int) -> list[bytes | str]:
    rng = random.Random(seed)
    out: list[bytes | str] = []
    for i in range(count):
        if i % 5 == 4:
            out.append(bytes(rng.randrange(256) for _ in range(rng.randrange(12))))
        else:
            out.append("".join(rng.choice(_FUZZ_ALPHABET) for _ in range(rng.randrange(1, 14))))
    return out


def check_parser_input(text: bytes | str) -> str:
    """'ok' or 'rejected'; raises AssertionError on a crash or an offset outside the input."""
    n_bytes = len(text) if isinstance(text, bytes) else len(text.encode("utf-8"))
    try:
        parse(text, 2)
        return "ok"
    except ExprError as exc:
        if not (isinstance(exc.offset, int) and 0 <= exc.offset <= n_bytes):
            raise AssertionError(f"bad offset {exc.offset!r} for {text!r}") from exc
        return "rejected"


def criterion_10(cfg: AcceptanceConfig, ctx: _Context) -> tuple[bool, dict]:
    wrong = []
    for text, t, expected in PRECEDENCE_CASES:
        got = float(evaluate(parse(text, 2), {"x1": 3.0, "t": float(t)}))
        if got != expected:
            wrong.append({"text": text, "expected": expected, "got": got})
    counts = {"ok": 0, "rejected": 0}
    crashes = []
    for text in fuzz_inputs(cfg.parser_fuzz, cfg.seed):
        try:
            counts[check_parser_input(text)] += 1
        except Exception as exc:  # any other exception is a crash
            crashes.append(f"{text!r}: {exc!r}")
    ok = not wrong and not crashes and len(PRECEDENCE_CASES) >= 30 and cfg.parser_fuzz >= 10_000
    return ok, {"precedence_cases": len(PRECEDENCE_CASES), "wrong": wrong, "fuzz": counts, "crashes": crashes[:10]}


CRITERIA: dict[int, tuple[str, Callable]] = {
    1: ("indicial-roots", criterion_1),
    2: ("constant-solution", criterion_2),
    3: ("manufactured-convergence", criterion_3),
    4: ("weighted-derivative-decay", criterion_4),
    5: ("log-factor-dichotomy", criterion_5),
    6: ("normal-derivative-trace", criterion_6),
    7: ("barrier-certification", criterion_7),
    8: ("regularization-continuation", criterion_8),
    9: ("characteristic-identities", criterion_9),
    10: ("expression-parser", criterion_10),
}


def run_criterion(number: int, cfg: AcceptanceConfig, ctx: _Context | None = None) -> CriterionResult:
    name, fn = CRITERIA[number]
    ctx = ctx or _Context(cfg)
    start = time.perf_counter()
    try:
        passed, detail = fn(cfg, ctx)
    except Exception as exc:  # a stage that raises is a failed stage
        passed, detail = False, {"error": repr(exc)}
    runtime = time.perf_counter() - start
    limit = cfg.runtime_limits.get(number)
    if limit is not None:
        detail["runtime_limit"] = limit
        if not runtime < limit:
            passed = False
            detail["runtime_exceeded"] = True
    return CriterionResult(number, name, bool(passed), jsonable(detail), runtime)


def run_all(cfg: AcceptanceConfig = AcceptanceConfig(), only: list[int] | None = None) -> list[CriterionResult]:
    ctx = _Context(cfg)
    return [run_criterion(k, cfg, ctx) for k in (only or sorted(CRITERIA))]


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
