"""Compare a clean power solution with its logarithmic counterpart.

For each s, solves the monomial case (u = t^s) and the log case
(u = t^s log t, needs integer s) and reports the log-factor verdict and the
plain decay fit of each computed solution.
"""
import argparse
import warnings

from degenell.analysis import detect_log_factor, fit_boundary_decay
from degenell.grid import make_grid
from degenell.manufactured import make_case
from degenell.operators import faces_from_field
from degenell.solver import solve_direct


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--M", type=int, default=512)
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--exponents", type=int, nargs="+", default=[1, 2])
    args = p.parse_args()

    grid = make_grid(2, args.N, args.M, args.gamma)
    for s in args.exponents:
        for tag, a, b in (("monomial", 1.0, 0.5), ("log", 1.0, 1.0)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                case = make_case(tag, a, b, s)
            exact, f = case.fields(grid)
            u, _ = solve_direct(case.coefficients(), f, faces_from_field(exact))
            verdict = detect_log_factor(u, [0.0], s)
            fit = fit_boundary_decay(u, case.u0, [0.0])
            print(f"s={s} {tag:8s} c={case.c:+.3f}  verdict={verdict.verdict:12s} "
                  f"slope={verdict.slope:+.4f}  decay exponent={fit.exponent:.4f} "
                  f"(R^2 {fit.r2:.5f}{', drift' if fit.drift else ''})")


if __name__ == "__main__":
    main()
