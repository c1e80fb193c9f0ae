"""Command-line front end.

Every subcommand reads a JSON config and writes either a CSV table
(``output.format = csv``) or a JSON envelope holding the config echo and the
payload (``output.format = json``).  With CSV output the envelope is also
written next to the table as ``<out>.json``.

CSV columns per subcommand:
  analyze         feasible, c_min, c_max, argmin_c, s_min, delta, mean_gap
  dp              m, z_1..z_{N-1}, value, a_1..a_N, b_1..b_N, phi_1..phi_N, duality_gap
  pde             t, z, w                      (two-expert grid)
                  t, x_1..x_N, U, stderr       (when pde.points is set)
  simulate        replication, regret          (sim.per_replication = true)
                  summary fields otherwise
  converge        M, u_M, U0, gap
  counterexample  one row of summary fields
  empty-regime    M, scaled_regret, stderr

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .balanced import analyze_balanced, compute_delta, construct_balanced
from .config import ExperimentConfig, parse_config
from .errors import (
    CapacityError, InfeasibleError, InvalidInputError, LimAdvError, NumericalError,
    UnsupportedRegimeError,
)
from .experiments import experiment_convergence, experiment_counterexample, experiment_empty_regime
from .game_core import AdversaryControl, ExpertModel, FinalCondition
from .minimax_dp import solve_value
from .pde_limit import Grid1DSpec, build_gaussian_limit, evaluate_U, solve_reduced_fd
from .serialize import dumps_csv, dumps_json
from .strategy_sim import AdversaryPolicy, ForecasterPolicy, pair_balanced_control, simulate

THREADS_ENV = "LIMADV_THREADS"
SUBCOMMANDS = ("analyze", "dp", "pde", "simulate", "converge", "counterexample", "empty-regime")


def _final(cfg: ExperimentConfig) -> FinalCondition:
    if cfg["final.kind"] == "max":
        return FinalCondition.max()
    return FinalCondition.max_theta(cfg["game.theta"])


def _analyze(cfg, threads):
    model = ExpertModel(cfg.mu)
    an = analyze_balanced(model)
    summary = an.to_dict()
    summary["delta"] = summary["mean_gap"] = None
    if not an.feasible:
        d = compute_delta(model, grid=cfg["experiment.delta_grid"])
        summary["delta"], summary["mean_gap"] = d.value, d.mean_gap
    cols = ["feasible", "c_min", "c_max", "argmin_c", "s_min", "delta", "mean_gap"]
    return summary, cols, [[summary[c] for c in cols]]


def _dp(cfg, threads):
    model = ExpertModel(cfg.mu)
    n = model.n_experts
    table = solve_value(cfg["game.M"], model, _final(cfg), extra=cfg["dp.extra"], threads=threads)
    cols = (["m"] + [f"z_{i + 1}" for i in range(n - 1)] + ["value"]
            + [f"a_{i + 1}" for i in range(n)] + [f"b_{i + 1}" for i in range(n)]
            + [f"phi_{i + 1}" for i in range(n)] + ["duality_gap"])
    rows = []
    for m in range(table.horizon + 1):
        pts = table.states(m)
        for k in range(pts.shape[0]):
            rows.append([m, *pts[k].tolist(), table.values[m][k], *table.controls[m][k].tolist(),
                         *table.phis[m][k].tolist(), table.gaps[m][k]])
    summary = {"M": table.horizon, "value_at_origin": table.value(0, np.zeros(n - 1, dtype=int)),
               "max_duality_gap": max(float(g.max()) for g in table.gaps),
               "states": len(rows)}
    return summary, cols, rows


def _pde(cfg, threads):
    model = ExpertModel(cfg.mu)
    theta = cfg.theta
    points = cfg["pde.points"]
    n = model.n_experts
    if points:
        gl = build_gaussian_limit(model, theta=theta)
        cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + ["U", "stderr"]
        rows = []
        for k, p in enumerate(points):
            r = evaluate_U(gl, p[0], p[1:], cfg["pde.mc_samples"], seed=cfg["sim.seed"] + k)
            rows.append([*p, r.value, r.stderr])
        summary = {"regime": gl.regime, "c_star": gl.c_star, "points": len(rows)}
        return summary, cols, rows
    g = cfg["pde.grid"]
    grid = solve_reduced_fd(model, theta=theta, grid=Grid1DSpec(g["z_min"], g["z_max"], g["nz"], g["nt"]))
    rows = []
    for t in cfg["pde.t_out"]:
        k = int(round(t * grid.nt))
        for zi, wi in zip(grid.z, grid.values[k]):
            rows.append([grid.t[k], zi, wi])
    summary = {"w_at_origin": grid.at(0, 0.0), "nz": grid.nz, "nt": grid.nt}
    return summary, ["t", "z", "w"], rows


def _adversary(cfg, model: ExpertModel, phi: FinalCondition):
    spec = cfg["strategy.adversary"]
    kind = spec["kind"]
    n = model.n_experts
    if kind == "constant":
        return AdversaryPolicy.constant(AdversaryControl(spec.get("a", [0.0] * n), spec.get("b", [0.0] * n)), model)
    if kind == "hat":
        return AdversaryPolicy.hat(model)
    if kind == "saddle":
        return AdversaryPolicy.saddle(model, phi)
    if kind == "dp":
        return AdversaryPolicy.dp(solve_value(cfg["game.M"], model, phi), model)
    an = analyze_balanced(model)
    if kind == "asymptotic_star":
        return AdversaryPolicy.asymptotic_star(build_gaussian_limit(model, an, cfg.theta), model, an)
    if kind == "balanced":
        level = spec.get("level", "c_min")
        if not an.feasible:
            raise InfeasibleError("no balanced control exists for these accuracies")
        c = {"c_min": an.c_min, "c_max": an.c_max}.get(level, level)
        if not isinstance(c, (int, float)):
            raise InvalidInputError(f"strategy.adversary.level: expected c_min, c_max or a number, got {level!r}")
        return AdversaryPolicy.constant(construct_balanced(float(c), model), model)
    if kind == "pair_balanced":
        return AdversaryPolicy.constant(pair_balanced_control(model, tuple(spec["pair"]), spec["c"]), model)
    raise InvalidInputError(f"strategy.adversary.kind: unsupported {kind!r}")


def _forecaster(cfg, model: ExpertModel, phi: FinalCondition):
    spec = cfg["strategy.forecaster"]
    kind = spec["kind"]
    if kind == "gradient_U":
        return ForecasterPolicy.gradient(build_gaussian_limit(model, theta=cfg.theta))
    if kind == "follow_the_leader":
        return ForecasterPolicy.follow_the_leader()
    if kind == "multiplicative_weights":
        return ForecasterPolicy.multiplicative_weights(spec.get("eta"))
    if kind == "best_response":
        return ForecasterPolicy.best_response(model)
    if kind == "uniform":
        return ForecasterPolicy.uniform()
    if kind == "dp":
        return ForecasterPolicy.dp(solve_value(cfg["game.M"], model, phi))
    raise InvalidInputError(f"strategy.forecaster.kind: unsupported {kind!r}")


def _simulate(cfg, threads):
    model = ExpertModel(cfg.mu)
    phi = _final(cfg)
    rep = simulate(model, _adversary(cfg, model, phi), _forecaster(cfg, model, phi), phi,
                   cfg["game.M"], cfg["sim.replications"], cfg["sim.seed"], threads=threads)
    summary = rep.summary()
    summary["diagnostics"] = list(rep.diagnostics)
    if cfg["sim.per_replication"]:
        rows = [[i, v] for i, v in enumerate(rep.terminal.tolist())]
        return summary, ["replication", "regret"], rows
    cols = [k for k in summary if k != "diagnostics"]
    return summary, cols, [[summary[c] for c in cols]]


def _converge(cfg, threads):
    model = ExpertModel(cfg.mu)
    rows = experiment_convergence(model, _final(cfg), cfg["experiment.M_list"], threads=threads)
    table = [[r.M, r.u_M, r.U0, r.gap] for r in rows]
    summary = {"U0": rows[0].U0, "final_gap": rows[-1].gap}
    return summary, ["M", "u_M", "U0", "gap"], table


def _counterexample(cfg, threads):
    if [round(m, 12) for m in cfg.mu] != [0.75, 0.25]:
        raise InvalidInputError("experts.mu: the counter-example is defined for mu = [0.75, 0.25]")
    res = experiment_counterexample(cfg["game.M"], cfg["sim.replications"], cfg["sim.seed"],
                                    cfg.theta, threads=threads)
    d = res.to_dict()
    cols = list(d)
    return d, cols, [[d[c] for c in cols]]


def _empty_regime(cfg, threads):
    model = ExpertModel(cfg.mu)
    res = experiment_empty_regime(model, cfg.theta, cfg["experiment.M_list"], cfg["sim.replications"],
                                  cfg["sim.seed"], threads=threads, delta_grid=cfg["experiment.delta_grid"])
    d = res.to_dict()
    rows = [[r["M"], r["scaled_regret"], r["stderr"]] for r in d["rows"]]
    return d, ["M", "scaled_regret", "stderr"], rows


HANDLERS = {
    "analyze": _analyze, "dp": _dp, "pde": _pde, "simulate": _simulate, "converge": _converge,
    "counterexample": _counterexample, "empty-regime": _empty_regime,
}


def run(subcommand: str, cfg: ExperimentConfig, threads: int = 1, timing: bool = False):
    """Run one subcommand; returns (envelope dict, csv columns, csv rows)."""
    if subcommand not in HANDLERS:
        raise InvalidInputError(f"unknown subcommand {subcommand!r}")
    t0 = time.perf_counter()
    summary, cols, rows = HANDLERS[subcommand](cfg, threads)
    env = {"artifact": "limadv", "version": __version__, "subcommand": subcommand,
           "config": cfg.data, "payload": summary}
    if cfg["output.format"] == "json":
        env["table"] = {"columns": cols, "rows": rows}
    if timing:
        env["wall_clock"] = time.perf_counter() - t0
    return env, cols, rows


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="limadv", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON config file ('-' for stdin)")
    p.add_argument("--out", help="output path (overrides output.path; stdout when neither is set)")
    p.add_argument("--seed", type=int, help="overrides sim.seed")
    p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    p.add_argument("--timing", action="store_true", help="add wall-clock seconds to the envelope")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = sys.stdin.buffer.read() if args.config == "-" else open(args.config, "rb").read()
        cfg = parse_config(raw)
        if args.seed is not None:
            if not (0 <= args.seed < 2**64):
                raise InvalidInputError("--seed must be a 64-bit unsigned integer")
            cfg.data["sim"]["seed"] = args.seed
        threads = _threads(args.threads)
        env, cols, rows = run(args.subcommand, cfg, threads, args.timing)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, CapacityError, InfeasibleError, UnsupportedRegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, LimAdvError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    out = args.out or cfg["output.path"]
    if cfg["output.format"] == "json":
        _write(out, dumps_json(env))
    else:
        _write(out, dumps_csv(cols, rows))
        if out:
            _write(out + ".json", dumps_json(env))
    return 0


def _write(path, text: str):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
