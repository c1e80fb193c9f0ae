#!/usr/bin/env python3
"""Exact DP value u^M(0, 0) against the Gaussian limit U(0, 0) for mu = (3/4, 1/4)."""

import argparse
import time

from limadv.experiments import experiment_convergence
from limadv.game_core import ExpertModel, FinalCondition


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mu", type=float, nargs=2, default=[0.75, 0.25])
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--M", type=int, nargs="+", default=[16, 64, 256])
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    t0 = time.perf_counter()
    rows = experiment_convergence(ExpertModel(args.mu), FinalCondition.max_theta(args.theta), args.M,
                                  threads=args.threads)
    print(f"{'M':>6} {'u^M(0,0)':>12} {'U(0,0)':>12} {'gap':>12}")
    for r in rows:
        print(f"{r.M:6d} {r.u_M:12.8f} {r.U0:12.8f} {r.gap:12.2e}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
