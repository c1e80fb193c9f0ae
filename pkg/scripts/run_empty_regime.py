#!/usr/bin/env python3
"""Regret growth for mu = (.1, .3, .5, .7, .9), where no balanced control exists."""

import argparse
import time

from limadv.balanced import analyze_balanced
from limadv.experiments import experiment_empty_regime
from limadv.game_core import ExpertModel


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--mu", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--M", type=int, nargs="+", default=[64, 256, 1024])
    p.add_argument("--replications", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    model = ExpertModel(args.mu)
    an = analyze_balanced(model)
    print(f"s_min = {an.s_min:.6f} at c = {an.argmin_c:.4f}  (feasible: {an.feasible})")
    t0 = time.perf_counter()
    r = experiment_empty_regime(model, args.theta, args.M, args.replications, args.seed, args.threads)
    for row in r.rows:
        print(f"M={row.M:6d}  V/sqrt(M) = {row.scaled_regret:.4f} +- {row.stderr:.4f}")
    if args.theta > 0:
        print(f"fitted slope -{r.kappa_hat:.4f}  delta {r.delta_hat:.3g}  mean gap {r.mean_gap:.4f}")
    else:
        print(f"pair {r.pair} at c = {r.pair_level:.3f}: bound {r.pair_bound:.4f}  holds: {r.bound_ok}")
    print(f"elapsed {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
