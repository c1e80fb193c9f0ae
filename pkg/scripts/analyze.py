#!/usr/bin/env python3
"""Balanced-set analysis for a list of accuracies."""

import argparse

from limadv.balanced import analyze_balanced, compute_delta
from limadv.game_core import ExpertModel
from limadv.serialize import dumps_json


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("mu", type=float, nargs="+")
    args = p.parse_args()
    model = ExpertModel(args.mu)
    out = analyze_balanced(model).to_dict()
    if not out["feasible"]:
        d = compute_delta(model)
        out.update(delta=d.value, mean_gap=d.mean_gap)
    print(dumps_json(out), end="")


if __name__ == "__main__":
    main()
