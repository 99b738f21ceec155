#!/usr/bin/env python3
"""Sweep the practical-mode sample-size multiplier kappa for str1.

Theory-mode constants collapse to full batches at desk scale, so kappa is
the knob worth tuning by hand; the default grid is {1, 0.1, 0.01}.

Example:
    python scripts/sweep_kappa.py --n 2000 --d 30 --epsilon 1e-3
"""

import argparse
import sys

import numpy as np

from strbench.datasets import generate_synthetic
from strbench.driver import RunConfig, run
from strbench.problems import from_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", default="logistic_nc", choices=["logistic_nc", "nls_nc"])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=30)
    ap.add_argument("--data-seed", type=int, default=8)
    ap.add_argument("--epsilon", type=float, default=1e-3)
    ap.add_argument("--delta", type=float, default=0.2)
    ap.add_argument("--kappas", type=float, nargs="+", default=[1.0, 0.1, 0.01])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    ds = generate_synthetic(args.n, args.d, seed=args.data_seed)
    problem = from_dataset(ds, args.task)

    print(f"{'kappa':>8} {'iters':>6} {'sfo':>10} {'sso':>10} {'|grad|':>10} "
          f"{'certified':>9} {'stop':>15}")
    for kappa in args.kappas:
        cfg = RunConfig(
            variant="str1", epsilon=args.epsilon, delta=args.delta,
            mode="practical", kappa_grad=1.0, kappa_hess=kappa, seed=args.seed,
        )
        res = run("str1", problem, cfg)
        print(f"{kappa:>8g} {len(res.trace):>6} {res.counters.sfo:>10} "
              f"{res.counters.sso:>10} {res.report.grad_norm:>10.2e} "
              f"{str(res.report.certified):>9} {res.stop_reason:>15}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
