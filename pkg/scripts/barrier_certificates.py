"""Certify barriers over a table of (sigma, mu) exponents for one operator,
and show what happens when the power correction K is dropped."""
import argparse
import json

from degenell.barriers import BarrierError, barrier_sample, construct_barrier, verify_barrier
from degenell.operators import OperatorCoefficients


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--c", default="-1.5 - 0.2*x1^2")
    p.add_argument("--b", nargs=2, default=["0.2", "0"])
    p.add_argument("--pairs", nargs="+", default=["0:0.5", "0.3:1.0", "0.5:1.2", "0:1.8"],
                   help="sigma:mu pairs")
    p.add_argument("--json")
    args = p.parse_args()

    coeffs = OperatorCoefficients.build([["1 + 0.2*sin(x1)", "0.1*t"], ["0.1*t", "1 + 0.1*x1^2"]],
                                        args.b, args.c, 2)
    sample = barrier_sample(2)
    results = []
    for pair in args.pairs:
        sigma, mu = (float(v) for v in pair.split(":"))
        try:
            spec = construct_barrier(coeffs, sigma, mu)
        except BarrierError as exc:
            print(f"sigma={sigma:<4} mu={mu:<4} rejected: {exc}")
            continue
        full = verify_barrier(coeffs, spec, sample)
        bare = verify_barrier(coeffs, spec.with_K(0.0), sample)
        print(f"sigma={sigma:<4} mu={mu:<4} eps={spec.eps:.3e} K={spec.K:.3e}  "
              f"worst ratio {full.worst_ratio:+.4f} ({'PASS' if full.passed else 'FAIL'});  "
              f"K=0: {bare.worst_ratio:+.4f} ({'PASS' if bare.passed else 'FAIL'})")
        results.append({"with_K": full.to_dict(), "without_K": bare.to_dict()})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, default=float)


if __name__ == "__main__":
    main()
