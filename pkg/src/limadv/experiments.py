"""Experiments that connect the exact game, its Gaussian limit and simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import ndtr
from scipy.stats import binom

from .balanced import analyze_balanced, compute_delta, construct_balanced
from .errors import InvalidInputError
from .game_core import ExpertModel, FinalCondition
from .minimax_dp import scaled_value, solve_value
from .pde_limit import best_pair_lower_bound, build_gaussian_limit, evaluate_U
from .strategy_sim import (
    Z975, AdversaryPolicy, ForecasterPolicy, pair_balanced_control, simulate,
)

COUNTER_MU = (0.75, 0.25)


# --- convergence of the scaled value --------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    M: int
    u_M: float
    U0: float
    gap: float


def experiment_convergence(model: ExpertModel, phi: FinalCondition, M_list, seed: int = 0,
                           threads: int = 1) -> list[ConvergenceRow]:
    """``u^M(0, 0)`` from the exact DP against the limit ``U(0, 0)``.

    ``seed`` is accepted for interface symmetry; both sides are deterministic.
    """
    if model.n_experts != 2:
        raise InvalidInputError("the convergence experiment runs the exact DP for two experts")
    if phi.kind == "custom":
        raise InvalidInputError("the limit is only known for the built-in final conditions")
    gl = build_gaussian_limit(model, theta=phi.effective_theta)
    U0 = evaluate_U(gl, 0.0, np.zeros(2)).value
    rows = []
    for M in M_list:
        table = solve_value(int(M), model, phi, threads=threads)
        u = scaled_value(table, 0.0, np.zeros(2))
        rows.append(ConvergenceRow(int(M), u, U0, u - U0))
    return rows


# --- the gradient-forecaster counter-example -------------------------------------


def counterexample_exact_regret(M: int, theta: float = 0.1) -> float:
    """Exact E[regret] of the gradient forecaster against the hat adversary.

    Under the hat strategy ``Z = X_1 - X_2`` moves up by one with probability
    3/4 and otherwise stays, so ``Z >= 0`` and the regret equals
    ``X_1 - theta Z / 2``.  Its expected increment is ``(3/4) phi_2``, where
    ``phi_2`` is the forecaster's weight on expert 2.  Averaging over the
    binomial law of ``Z_{m-1}`` gives the value in closed form.
    """
    gl = build_gaussian_limit(ExpertModel(COUNTER_MU), theta=theta)
    var = gl.diff_variance
    total = 0.0
    for m in range(1, M + 1):
        k = np.arange(m)
        pk = binom.pmf(k, m - 1, 0.75)
        s = math.sqrt(var * (M - m + 1))
        total += float(pk @ (1.0 - ndtr(k / s)))
    return 0.75 * (1.0 - theta) * total


@dataclass(frozen=True)
class CounterexampleResult:
    M: int
    replications: int
    theta: float
    forecaster: str
    adversary: str
    scaled_regret_mean: float
    ci_low: float
    ci_high: float
    U0: float
    gap: float
    gap_significant: bool
    z_step_mean: float | None
    z_step_var: float | None
    z_step_mean_se: float | None
    z_step_var_se: float | None
    exact_scaled_regret: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def experiment_counterexample(M: int = 4096, replications: int = 100_000, seed: int = 0,
                              theta: float = 0.1, forecaster: str = "gradient_U",
                              adversary: str = "hat", threads: int = 1) -> CounterexampleResult:
    if not (0.0 < theta < 1.0):
        raise InvalidInputError("theta must lie in (0, 1)")
    model = ExpertModel(COUNTER_MU)
    phi = FinalCondition.max_theta(theta)
    analysis = analyze_balanced(model)
    gl = build_gaussian_limit(model, analysis, theta)
    if adversary == "hat":
        adv = AdversaryPolicy.hat(model)
    elif adversary == "balanced":
        adv = AdversaryPolicy.constant(construct_balanced(analysis.c_min, model), model)
    else:
        raise InvalidInputError(f"unknown adversary {adversary!r}")
    if forecaster == "gradient_U":
        fore = ForecasterPolicy.gradient(gl)
    elif forecaster == "best_response":
        fore = ForecasterPolicy.best_response(model)
    else:
        raise InvalidInputError(f"unknown forecaster {forecaster!r}")
    rep = simulate(model, adv, fore, phi, M, replications, seed, threads=threads, track_z=True)
    root = math.sqrt(M)
    U0 = evaluate_U(gl, 0.0, np.zeros(2)).value
    mean = rep.mean / root
    half = Z975 * rep.stderr / root
    n = rep.z_step_count
    exact = None
    if adversary == "hat" and forecaster == "gradient_U":
        exact = counterexample_exact_regret(M, theta) / root
    # steps are i.i.d. under a constant adversary
    zm_se = math.sqrt(rep.z_step_var / n) if n else None
    zv_se = math.sqrt(max(rep.z_step_m4 - rep.z_step_var**2, 0.0) / n) if n else None
    return CounterexampleResult(
        M, rep.replications, theta, forecaster, adversary, mean, mean - half, mean + half,
        U0, mean - U0, bool(mean - half - U0 > 0), rep.z_step_mean, rep.z_step_var,
        zm_se, zv_se, exact,
    )


# --- the empty balanced regime ---------------------------------------------------


@dataclass(frozen=True)
class EmptyRegimeRow:
    M: int
    scaled_regret: float
    stderr: float


@dataclass
class EmptyRegimeResult:
    theta: float
    rows: list[EmptyRegimeRow]
    kappa_hat: float | None = None
    intercept: float | None = None
    delta_hat: float | None = None
    mean_gap: float | None = None
    reference_slope: float | None = None   # theta * delta_hat / N
    mean_gap_slope: float | None = None    # theta * mean_gap
    pair_bound: float | None = None
    pair: tuple | None = None
    pair_level: float | None = None
    bound_ok: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = [asdict(r) for r in self.rows]
        return d


def experiment_empty_regime(model: ExpertModel, theta: float, M_list, replications: int,
                            seed: int = 0, threads: int = 1, delta_grid: int = 8,
                            bound_tol: float = 0.05) -> EmptyRegimeResult:
    """Regret growth when no balanced control exists.

    For ``theta > 0`` the adversary solves the one-round saddle problem for
    the current set of leading experts and the forecaster best-responds.  The
    leading set only depends on gain differences, which the forecaster cannot
    affect, so the forecaster's per-round best response is optimal against
    this adversary and the estimate is a lower bound for the game value.

    For ``theta = 0`` the adversary balances the best admissible pair.
    """
    analysis = analyze_balanced(model)
    if analysis.feasible:
        raise InvalidInputError("a balanced control exists; this experiment needs the empty regime")
    n = model.n_experts
    rows = []
    if theta > 0:
        phi = FinalCondition.max_theta(theta)
        adv = AdversaryPolicy.saddle(model, phi)
    else:
        phi = FinalCondition.max()
        pb = best_pair_lower_bound(model)
        adv = AdversaryPolicy.constant(pair_balanced_control(model, pb.pair, pb.c), model)
    fore = ForecasterPolicy.best_response(model)
    for k, M in enumerate(M_list):
        rep = simulate(model, adv, fore, phi, int(M), replications, seed + k, threads=threads)
        root = math.sqrt(M)
        rows.append(EmptyRegimeRow(int(M), rep.mean / root, rep.stderr / root))
    res = EmptyRegimeResult(theta, rows)
    if theta > 0:
        d = compute_delta(model, grid=delta_grid)
        res.delta_hat = d.value
        res.mean_gap = d.mean_gap
        res.reference_slope = theta * d.value / n
        res.mean_gap_slope = theta * d.mean_gap
        if len(rows) >= 2:
            xs = np.sqrt([r.M for r in rows])
            ys = np.array([r.scaled_regret for r in rows])
            slope, icept = np.polyfit(xs, ys, 1)
            res.kappa_hat = float(-slope)
            res.intercept = float(icept)
    else:
        res.pair = pb.pair
        res.pair_level = pb.c
        res.pair_bound = pb.value
        res.bound_ok = bool(rows[-1].scaled_regret >= pb.value - bound_tol)
    return res

