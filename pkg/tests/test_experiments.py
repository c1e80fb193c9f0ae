import math

import numpy as np
import pytest

from limadv.errors import InvalidInputError
from limadv.experiments import (
    counterexample_exact_regret, experiment_convergence, experiment_counterexample,
    experiment_empty_regime,
)
from limadv.game_core import ExpertModel, FinalCondition
from limadv.pde_limit import build_gaussian_limit
from limadv.strategy_sim import ForecasterPolicy, adversary_hat

from oracles import exact_two_expert_mean

COUNTER = ExpertModel([0.75, 0.25])
EMPTY = ExpertModel([0.1, 0.3, 0.5, 0.7, 0.9])


@pytest.mark.parametrize("M, theta", [(1, 0.1), (5, 0.1), (9, 0.3)])
def test_exact_regret_matches_forward_law(M, theta):
    # propagate the law of X under the gradient policy itself, with no Z >= 0 shortcut
    pol = ForecasterPolicy.gradient(build_gaussian_limit(COUNTER, theta=theta))
    ref = exact_two_expert_mean(COUNTER.mu, adversary_hat(COUNTER).as_vector(),
                                lambda m, M, X: pol.controls(m, M, X, None),
                                FinalCondition.max_theta(theta), M)
    assert counterexample_exact_regret(M, theta) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_counterexample_small_run():
    r = experiment_counterexample(M=64, replications=20_000, seed=1)
    assert abs(r.scaled_regret_mean - r.exact_scaled_regret) <= 4 * (r.ci_high - r.ci_low) / (2 * 1.96)
    assert r.z_step_mean == pytest.approx(0.75, abs=4 * r.z_step_mean_se)
    assert r.z_step_var == pytest.approx(0.1875, abs=4 * r.z_step_var_se)
    assert r.U0 == pytest.approx(0.21987113, abs=1e-8)
    d = r.to_dict()
    assert d["forecaster"] == "gradient_U" and d["M"] == 64
    b = experiment_counterexample(M=16, replications=2000, seed=1, adversary="balanced",
                                  forecaster="best_response")
    assert b.exact_scaled_regret is None
    # balanced at c_min: no drift in Z
    assert abs(b.z_step_mean) <= 4 * b.z_step_mean_se


def test_counterexample_errors():
    for kw in ({"theta": 0.0}, {"adversary": "nope"}, {"forecaster": "nope"}):
        with pytest.raises(InvalidInputError):
            experiment_counterexample(M=4, replications=10, **kw)


def test_convergence_rows():
    rows = experiment_convergence(COUNTER, FinalCondition.max_theta(0.1), [4, 16])
    assert [r.M for r in rows] == [4, 16]
    for r in rows:
        assert r.U0 == pytest.approx(0.21987113, abs=1e-8)
        assert r.gap == pytest.approx(r.u_M - r.U0)
    assert abs(rows[1].gap) < abs(rows[0].gap)
    with pytest.raises(InvalidInputError):
        experiment_convergence(ExpertModel([0.5] * 3), FinalCondition.max(), [4])
    with pytest.raises(InvalidInputError):
        experiment_convergence(COUNTER, FinalCondition.custom(lambda x: np.max(x, axis=-1)), [4])


def test_empty_regime_small():
    r = experiment_empty_regime(EMPTY, 0.1, [4, 16], 2000, seed=3, delta_grid=2)
    assert [row.M for row in r.rows] == [4, 16]
    assert r.delta_hat > 0 and r.mean_gap == pytest.approx(1 / 14, abs=1e-9)
    assert r.reference_slope == pytest.approx(0.1 * r.delta_hat / 5)
    assert r.kappa_hat is not None and r.pair is None
    z = experiment_empty_regime(EMPTY, 0.0, [16], 2000, seed=3)
    assert z.pair == (3, 4) and z.pair_level == pytest.approx(0.5)
    assert z.rows[0].scaled_regret > 0 and isinstance(z.bound_ok, bool)
    assert z.to_dict()["rows"][0]["M"] == 16
    with pytest.raises(InvalidInputError, match="balanced control exists"):
        experiment_empty_regime(COUNTER, 0.1, [4], 10)
