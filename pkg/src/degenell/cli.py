"""Command-line driver: ``degenell <command> --config problem.toml --out DIR``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis
from .acceptance import AcceptanceConfig, jsonable, run_all
from .barriers import BarrierError, barrier_sample, construct_barrier, verify_barrier
from .exprparse import EvalDomainError, ExprError, evaluate_at, parse
from .grid import Grid, GridError, ScalarField, make_grid, read_field_csv, write_field_csv, write_grid_json
from .manufactured import ManufacturedCase, make_case
from .operators import OperatorCoefficients, OperatorError, faces_from_field, verify_conditions
from .solver import NumericalFailure, SolveConfig, residual, solve

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("degenell")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    grid: Grid
    seed: int = 0
    coefficients: OperatorCoefficients | None = None
    f_expr: str | None = None
    f_file: Path | None = None
    boundary_expr: str | None = None
    case: ManufacturedCase | None = None
    solve: SolveConfig = field(default_factory=SolveConfig)
    analysis: list[dict] = field(default_factory=list)
    solution_file: Path | None = None
    indicial: dict = field(default_factory=dict)
    barrier: dict = field(default_factory=dict)
    acceptance: AcceptanceConfig = field(default_factory=AcceptanceConfig)
    raw: dict = field(default_factory=dict)
    quiet: bool = False

    def operator(self) -> OperatorCoefficients:
        if self.case is not None:
            return self.case.coefficients()
        return self.coefficients

    def fields_for_solve(self) -> tuple[ScalarField, dict, ScalarField | None]:
        """(f, boundary faces, exact solution if known)."""
        g = self.grid
        if self.case is not None:
            u_exact, f = self.case.fields(g)
            return f, faces_from_field(u_exact), u_exact
        if self.f_file is not None:
            try:
                f = read_field_csv(self.f_file, g)
            except GridError as exc:
                raise ConfigError(str(exc)) from exc
        elif self.f_expr is not None:
            f = _expr_field(self.f_expr, g, "f")
        else:
            raise ConfigError("[operator] needs f or f_file to solve")
        if self.boundary_expr is None:
            raise ConfigError("operator.boundary is required to solve")
        return f, faces_from_field(_expr_field(self.boundary_expr, g, "boundary")), None


def _expr_field(text: str, grid: Grid, what: str) -> ScalarField:
    try:
        node = parse(str(text), grid.dim)
        mesh = grid.mesh()
        return ScalarField(grid, np.broadcast_to(evaluate_at(node, mesh, grid.dim), grid.shape))
    except (ExprError, EvalDomainError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _table(raw: dict, key: str) -> dict:
    val = raw.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"[{key}] must be a table")
    return val


def load_config(path: str | Path, seed: int | None = None, mode: str | None = None) -> ProblemConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not raw:
        raise ConfigError(f"{path} is empty")
    try:
        return _build_config(raw, path.parent, seed, mode)
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _build_config(raw: dict, base: Path, seed: int | None, mode: str | None) -> ProblemConfig:
    g = _table(raw, "grid")
    n = int(g.get("n", 2))
    try:
        grid = make_grid(n, int(g.get("N", 64)), int(g.get("M", 128)), float(g.get("gamma", 2.0)))
    except GridError as exc:
        raise ConfigError(f"[grid]: {exc}") from exc
    cfg = ProblemConfig(grid=grid, raw=raw)
    cfg.seed = int(raw.get("seed", 0)) if seed is None else seed

    has_op, has_case = "operator" in raw, "manufactured" in raw
    needs_problem = any(k in raw for k in ("solve", "analysis", "indicial", "input"))
    if has_op and has_case:
        raise ConfigError("give exactly one of [operator] and [manufactured]")
    if has_case:
        m = _table(raw, "manufactured")
        missing = [k for k in ("case", "a", "b", "s") if k not in m]
        if missing:
            raise ConfigError(f"[manufactured] is missing {missing}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cfg.case = make_case(m["case"], float(m["a"]), float(m["b"]), float(m["s"]),
                                     str(m.get("psi", "1")), n)
        except ExprError as exc:
            raise ConfigError(f"[manufactured] psi: {exc}") from exc
    elif has_op:
        op = _table(raw, "operator")
        missing = [k for k in ("a", "b", "c") if k not in op]
        if missing:
            raise ConfigError(f"[operator] is missing {missing}")
        try:
            cfg.coefficients = OperatorCoefficients.build(op["a"], op["b"], str(op["c"]), n)
        except (ExprError, OperatorError) as exc:
            raise ConfigError(f"[operator]: {exc}") from exc
        if "f" in op and "f_file" in op:
            raise ConfigError("[operator] takes f or f_file, not both")
        cfg.f_expr = str(op["f"]) if "f" in op else None
        if "f_file" in op:
            cfg.f_file = base / op["f_file"]
            if not cfg.f_file.exists():
                raise ConfigError(f"f_file not found: {cfg.f_file}")
        cfg.boundary_expr = str(op["boundary"]) if "boundary" in op else None
    elif needs_problem:
        raise ConfigError("give exactly one of [operator] and [manufactured]")

    s = dict(_table(raw, "solve"))
    if mode is not None:
        s["mode"] = mode
    known = {f.name for f in fields(SolveConfig)}
    if set(s) - known:
        raise ConfigError(f"[solve] has unknown keys {sorted(set(s) - known)}")
    cfg.solve = SolveConfig(**s)

    ops = raw.get("analysis", [])
    if isinstance(ops, dict):
        ops = [ops]
    if not all(isinstance(o, dict) and "op" in o for o in ops):
        raise ConfigError("each [[analysis]] entry needs an 'op' key")
    cfg.analysis = ops
    inp = _table(raw, "input")
    if "solution" in inp:
        cfg.solution_file = base / inp["solution"]
        if not cfg.solution_file.exists():
            raise ConfigError(f"solution file not found: {cfg.solution_file}")
    cfg.indicial = _table(raw, "indicial")
    cfg.barrier = _table(raw, "barrier")
    acc = dict(_table(raw, "acceptance"))
    acc.setdefault("seed", cfg.seed)
    if seed is not None:
        acc["seed"] = seed
    cfg.acceptance = AcceptanceConfig.from_dict(acc)
    return cfg


def write_json(path: Path, data: Any) -> None:
    # Python floats serialise via repr: the shortest string that round-trips exactly
    path.write_text(json.dumps(jsonable(data), indent=2) + "\n")


def _require_problem(cfg: ProblemConfig) -> None:
    if cfg.operator() is None:
        raise ConfigError("this command needs an [operator] or [manufactured] table")


def cmd_indicial(cfg: ProblemConfig, out: Path, scope: str | None) -> int:
    _require_problem(cfg)
    scope = scope or cfg.indicial.get("scope")
    if scope not in ("boundary", "domain"):
        raise ConfigError("indicial needs an explicit scope: --scope boundary|domain (or [indicial] scope)")
    coeffs = cfg.operator()
    exponent = float(cfg.indicial.get("exponent", 0.5))
    report = verify_conditions(coeffs, cfg.grid, exponent)
    ann = coeffs.sample_grid(cfg.grid)[0][-1, -1][..., 0]
    pts = report.boundary_points
    with open(out / "roots.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(cfg.grid.dim - 1)] + ["mu_minus", "mu_plus", "Q_exponent"])
        for p, lo, hi, q in zip(pts, report.roots_minus, report.roots_plus, report.Q_boundary):
            w.writerow([f"{x:.17g}" for x in p[:-1]] + [f"{lo:.17g}", f"{hi:.17g}", f"{q:.17g}"])
    data = {"scope": scope, **report.to_dict()}
    if scope == "boundary":
        failures = []
        if report.c0_boundary <= 0:
            failures.append(f"sup c on t = 0 is {-report.c0_boundary:.17g} >= 0")
        if report.c_exponent_boundary <= 0:
            failures.append(f"sup Q({exponent}) on t = 0 is {-report.c_exponent_boundary:.17g} >= 0")
        if np.any(ann <= 0):
            failures.append("a_nn <= 0 on t = 0")
        data["failures"], data["ok"] = failures, not failures
        for key in ("c0", "c_exponent"):
            data.pop(key)
    else:
        failures = report.failures
    rp = report.roots_plus[np.isfinite(report.roots_plus)]
    data["constant_roots"] = bool(rp.size and np.ptp(rp) == 0)
    write_json(out / "indicial.json", data)
    _say(cfg, f"indicial ({scope}): mu+ in {data['root_plus_range']}, mu- in {data['root_minus_range']}, "
              f"{'OK' if not failures else 'FAIL: ' + '; '.join(failures)}")
    return EXIT_OK if not failures else EXIT_VERIFY


def cmd_manufacture(cfg: ProblemConfig, out: Path) -> int:
    if cfg.case is None:
        raise ConfigError("manufacture needs a [manufactured] table")
    u, f = cfg.case.fields(cfg.grid)
    write_field_csv(out / "u.csv", u)
    write_field_csv(out / "f.csv", f)
    write_grid_json(out / "grid.json", cfg.grid)
    write_json(out / "case.json", {**cfg.case.to_dict(), "grid": cfg.grid.to_dict()})
    _say(cfg, f"wrote u.csv, f.csv for case {cfg.case.tag} (s = {cfg.case.s}, c = {cfg.case.c:.17g})")
    return EXIT_OK


def _solve(cfg: ProblemConfig):
    _require_problem(cfg)
    f, faces, u_exact = cfg.fields_for_solve()
    try:
        u, report = solve(cfg.operator(), f, faces, cfg.solve)
    except OperatorError as exc:
        raise ConfigError(str(exc)) from exc
    return u, f, report, u_exact


def cmd_solve(cfg: ProblemConfig, out: Path) -> int:
    u, f, report, u_exact = _solve(cfg)
    write_field_csv(out / "solution.csv", u)
    write_field_csv(out / "residual.csv", residual(cfg.operator(), u, f))
    write_grid_json(out / "grid.json", cfg.grid)
    data = report.to_dict()
    if u_exact is not None:
        data["sup_error"] = (u - u_exact).sup()
    write_json(out / "report.json", data)
    _say(cfg, f"solved ({report.mode}): sup|u| = {u.sup():.6g}"
              + (f", sup error = {data['sup_error']:.3e}" if u_exact is not None else "")
              + ("" if not report.flags else f", flags: {report.flags}"))
    return EXIT_OK


def _anchor_u0(cfg: ProblemConfig, f: ScalarField):
    if cfg.case is not None:
        return cfg.case.u0
    _, _, c = cfg.operator().sample_grid(cfg.grid)
    return f.values[..., 0] / c[..., 0]


def _window(op: dict):
    w = op.get("window")
    return None if w is None else (float(w[0]), float(w[1]))


def _x0(cfg: ProblemConfig, op: dict) -> list[float]:
    x0 = op.get("x0", [0.0] * (cfg.grid.dim - 1))
    if len(x0) != cfg.grid.dim - 1:
        raise ConfigError(f"x0 needs {cfg.grid.dim - 1} tangential coordinates")
    return [float(v) for v in x0]


def run_analysis(cfg: ProblemConfig, op: dict, u: ScalarField, f: ScalarField, out: Path, index: int) -> dict:
    kind = op["op"]
    if kind == "decay":
        x0 = _x0(cfg, op)
        fit = analysis.fit_boundary_decay(u, _anchor_u0(cfg, f), x0, _window(op))
        t, v = analysis.normal_profile(u, x0)
        with open(out / f"profile_{index}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "value"])
            w.writerows([[f"{a:.17g}", f"{b:.17g}"] for a, b in zip(t, v)])
        return fit.to_dict()
    if kind == "weighted_decay":
        d1, d2 = analysis.weighted_derivative_decay(u, _x0(cfg, op), _window(op))
        t_min, w1, w2 = analysis.weighted_traces(u, _x0(cfg, op))
        return {"t_Du": d1.to_dict(), "t2_D2u": d2.to_dict(), "t_min": t_min, "trace_t_Du": w1, "trace_t2_D2u": w2}
    if kind == "log_factor":
        if "s" not in op and cfg.case is None:
            raise ConfigError("log_factor needs s")
        s = float(op.get("s", cfg.case.s if cfg.case else 0))
        return analysis.detect_log_factor(u, _x0(cfg, op), s, _window(op)).to_dict()
    if kind == "normal_trace":
        return analysis.normal_trace_check(cfg.operator(), u, f, float(op.get("margin", 0.0)),
                                           float(op.get("inner", 1.0))).to_dict()
    if kind == "tangential_bound":
        sup, node = analysis.tangential_bound_check(u, op.get("region"))
        return {"sup": sup, "node": node}
    if kind == "holder":
        return {"seminorm_lower_bound": analysis.holder_seminorm(
            u, float(op.get("alpha", 0.5)), op.get("region"), int(op.get("sample_pairs", 4000)), cfg.seed)}
    if kind == "weighted_norm":
        return analysis.weighted_norm_C_k_alpha_2(u, int(op.get("k", 0)), float(op.get("alpha", 0.5)),
                                                  op.get("region"), seed=cfg.seed).to_dict()
    if kind == "interior_balls":
        levels = [float(t) for t in op.get("t_levels", [0.05, 0.1, 0.2, 0.4])]
        vals = analysis.interior_ball_seminorms(u, float(op.get("alpha", 0.5)), _x0(cfg, op), levels, cfg.seed)
        return {"t_levels": levels, "seminorms": vals.tolist()}
    raise ConfigError(f"unknown analysis op {kind!r}")


def cmd_analyze(cfg: ProblemConfig, out: Path) -> int:
    if not cfg.analysis:
        raise ConfigError("analyze needs at least one [[analysis]] entry")
    _require_problem(cfg)
    if cfg.solution_file is not None:
        f, _, _ = cfg.fields_for_solve()
        try:
            u = read_field_csv(cfg.solution_file, cfg.grid)
        except GridError as exc:
            raise ConfigError(str(exc)) from exc
        source = str(cfg.solution_file)
    else:
        u, f, _, _ = _solve(cfg)
        source = f"computed ({cfg.solve.mode})"
    results = []
    for i, op in enumerate(cfg.analysis):
        try:
            res = run_analysis(cfg, op, u, f, out, i)
        except analysis.AnalysisError as exc:
            res = {"error": str(exc)}
        results.append({"op": op["op"], "params": {k: v for k, v in op.items() if k != "op"}, "result": res})
        _say(cfg, f"{op['op']}: {json.dumps(jsonable(res))[:200]}")
    write_json(out / "analysis.json", {"solution": source, "results": results})
    return EXIT_OK


def cmd_barrier(cfg: ProblemConfig, out: Path) -> int:
    coeffs = cfg.operator() or OperatorCoefficients.constant(1.0, 0.0, -1.0, cfg.grid.dim)
    b = cfg.barrier
    if "sigma" not in b or "mu" not in b:
        raise ConfigError("[barrier] needs sigma and mu")
    try:
        spec = construct_barrier(coeffs, float(b["sigma"]), float(b["mu"]))
    except BarrierError as exc:
        write_json(out / "certificate.json", {"passed": False, "error": str(exc)})
        _say(cfg, f"barrier: FAIL ({exc})")
        return EXIT_VERIFY
    if "K" in b:
        spec = spec.with_K(float(b["K"]))
    sample = barrier_sample(cfg.grid.dim, int(b.get("n_tangential", 64 if cfg.grid.dim == 2 else 24)),
                            int(b.get("n_normal", 1600 if cfg.grid.dim == 2 else 200)),
                            float(b.get("t_min", 1e-8)))
    cert = verify_barrier(coeffs, spec, sample)
    write_json(out / "certificate.json", cert.to_dict())
    _say(cfg, f"barrier sigma={spec.sigma} mu={spec.mu}: worst ratio {cert.worst_ratio:.6g} vs "
              f"threshold {cert.threshold:.6g} -> {'PASS' if cert.passed else 'FAIL'}")
    return EXIT_OK if cert.passed else EXIT_VERIFY


def cmd_full_verify(cfg: ProblemConfig, out: Path) -> int:
    results = run_all(cfg.acceptance)
    for r in results:
        _say(cfg, r.line())
    passed = all(r.passed for r in results)
    write_json(out / "summary.json", {"passed": passed, "criteria": [r.to_dict() for r in results]})
    return EXIT_OK if passed else EXIT_VERIFY


def _say(cfg: ProblemConfig, message: str) -> None:
    if not cfg.quiet:
        print(message)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="degenell", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("indicial", "manufacture", "solve", "analyze", "barrier", "full-verify"):
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True, type=Path)
        sp_.add_argument("--out", type=Path, default=Path("."))
        sp_.add_argument("--seed", type=int, default=None)
        sp_.add_argument("--mode", choices=("direct", "continuation", "both"), default=None)
        sp_.add_argument("--quiet", action="store_true")
        if name == "indicial":
            sp_.add_argument("--scope", choices=("boundary", "domain"), default=None,
                             help="roots/margins on t = 0 only, or margins over the whole domain")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.mode)
        cfg.quiet = args.quiet
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "indicial":
            return cmd_indicial(cfg, args.out, args.scope)
        handler = {"manufacture": cmd_manufacture, "solve": cmd_solve, "analyze": cmd_analyze,
                   "barrier": cmd_barrier, "full-verify": cmd_full_verify}[args.command]
        return handler(cfg, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
