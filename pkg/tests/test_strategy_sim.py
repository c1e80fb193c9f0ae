import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limadv.balanced import analyze_balanced
from limadv.errors import InvalidInputError
from limadv.game_core import AdversaryControl, ExpertModel, FinalCondition, expected_gain
from limadv.minimax_dp import solve_value
from limadv.pde_limit import build_gaussian_limit
from limadv.strategy_sim import (
    AdversaryPolicy, ForecasterPolicy, adversary_asymptotic_step, adversary_hat,
    forecaster_gradient_step, myopic_saddle, pair_balanced_control, simulate,
)

from oracles import exact_two_expert_mean

COUNTER = ExpertModel([0.75, 0.25])
PHI = FinalCondition.max_theta(0.1)


# --- single-state steps ------------------------------------------------------------------


def test_hat_control():
    h = adversary_hat(COUNTER)
    np.testing.assert_allclose(h.as_vector(), [0, 0.5, 0.5, 0])
    np.testing.assert_allclose(expected_gain(h, COUNTER), [0.875, 0.125])
    with pytest.raises(InvalidInputError):
        adversary_hat(ExpertModel([0.5, 0.5, 0.5]))


def test_asymptotic_step_levels():
    gl = build_gaussian_limit(COUNTER)
    an = analyze_balanced(COUNTER)
    a = adversary_asymptotic_step(gl, an, 1, 10, [0, 0])
    # two experts: Tr(Sigma1 D^2 U) = 0, and the tie goes to c_min
    np.testing.assert_allclose(expected_gain(a, COUNTER), an.c_min, atol=1e-12)
    sym = ExpertModel([0.3, 0.3])
    an = analyze_balanced(sym)
    a = adversary_asymptotic_step(build_gaussian_limit(sym, theta=0.0), an, 1, 10, [0, 0])
    # equal accuracies give a positive trace, so the larger level wins
    np.testing.assert_allclose(expected_gain(a, sym), an.c_max, atol=1e-12)
    with pytest.raises(InvalidInputError):
        empty = ExpertModel([0.1, 0.3, 0.5, 0.7, 0.9])
        adversary_asymptotic_step(gl, analyze_balanced(empty), 1, 10, [0, 0])


def test_gradient_step():
    gl = build_gaussian_limit(ExpertModel([0.5, 0.5]), theta=0.0)
    np.testing.assert_allclose(forecaster_gradient_step(gl, 1, 16, [0, 0]).phi, [0.5, 0.5])
    np.testing.assert_allclose(forecaster_gradient_step(gl, 1, 16, [40, 0]).phi, [1, 0], atol=1e-12)
    np.testing.assert_allclose(forecaster_gradient_step(gl, 17, 16, [2, 2]).phi, [0.5, 0.5])
    gl = build_gaussian_limit(COUNTER, theta=0.2)
    p = forecaster_gradient_step(gl, 5, 16, [3, 0]).phi
    assert p[0] > p[1] >= 0.1 - 1e-12 and p.sum() == pytest.approx(1.0)


def test_pair_control():
    m = ExpertModel([0.1, 0.3, 0.5, 0.7, 0.9])
    a = pair_balanced_control(m, (3, 4), 0.5)
    g = expected_gain(a, m)
    assert g[3] == pytest.approx(0.5) and g[4] == pytest.approx(0.5)
    np.testing.assert_allclose(g[:3], m.mu[:3])
    v = a.as_vector()
    assert v[[0, 1, 2, 5, 6, 7]].sum() == 0.0


def test_myopic_saddle():
    alpha, phi = myopic_saddle(COUNTER, FinalCondition.max(), [1, 1])
    assert alpha.sum() == pytest.approx(1.0) and phi.sum() == pytest.approx(1.0)
    assert np.all(alpha >= 0) and np.all(phi >= 0)
    # one expert on top: the forecaster just follows it
    _, phi = myopic_saddle(ExpertModel([0.5, 0.5]), FinalCondition.max(), [1, 0])
    np.testing.assert_allclose(phi, [1, 0], atol=1e-12)
    with pytest.raises(InvalidInputError):
        myopic_saddle(COUNTER, FinalCondition.custom(lambda x: np.max(x, axis=-1)), [1, 1])


# --- policies ---------------------------------------------------------------------------------


def test_forecaster_policies_emit_distributions():
    X = np.array([[3.0, 1.0], [2.0, 2.0], [-1.0, 0.0]])
    A = np.tile([0.25, 0.25, 0.25, 0.25], (3, 1))
    gl = build_gaussian_limit(COUNTER)
    for f in (ForecasterPolicy.uniform(), ForecasterPolicy.follow_the_leader(),
              ForecasterPolicy.multiplicative_weights(), ForecasterPolicy.multiplicative_weights(0.3),
              ForecasterPolicy.best_response(COUNTER), ForecasterPolicy.gradient(gl)):
        P = f.controls(2, 8, X, A)
        assert P.shape == (3, 2)
        np.testing.assert_allclose(P.sum(axis=1), 1.0)
        assert P.min() >= 0
    ftl = ForecasterPolicy.follow_the_leader().controls(1, 4, X, A)
    np.testing.assert_allclose(ftl, [[1, 0], [0.5, 0.5], [0, 1]])


def test_adversary_policies_emit_distributions():
    X = np.array([[3.0, 1.0], [2.0, 2.0]])     # reachable after two rounds
    gl = build_gaussian_limit(COUNTER)
    t = solve_value(4, COUNTER, PHI)
    for a in (AdversaryPolicy.hat(COUNTER), AdversaryPolicy.asymptotic_star(gl, COUNTER),
              AdversaryPolicy.saddle(COUNTER, PHI), AdversaryPolicy.dp(t, COUNTER),
              AdversaryPolicy.constant(AdversaryControl.pure(2, 0, 1), COUNTER)):
        P = np.asarray(a.controls(3, 4, X))
        assert P.shape == (2, 4)
        np.testing.assert_allclose(P.sum(axis=1), 1.0)
    from limadv.minimax_dp import solve_full_adversary
    with pytest.raises(InvalidInputError):
        AdversaryPolicy.dp(solve_full_adversary(2, 2, PHI), COUNTER)


# --- engine -------------------------------------------------------------------------------------


def test_single_round_half():
    m = ExpertModel([1.0, 1.0])
    adv = AdversaryPolicy.constant(AdversaryControl([0.5, 0.5], [0, 0]), m)
    r = simulate(m, adv, ForecasterPolicy.uniform(), FinalCondition.max(), 1, 100_000, seed=3)
    assert abs(r.mean - 0.5) <= 4 * r.stderr
    assert r.ci95_low < r.mean < r.ci95_high and r.aborted == 0


def test_zero_rounds_is_phi():
    x0 = [2.0, -1.0]
    r = simulate(COUNTER, AdversaryPolicy.hat(COUNTER), ForecasterPolicy.uniform(), PHI, 0, 10, x0=x0)
    np.testing.assert_allclose(r.terminal, float(PHI(np.array(x0))))
    assert r.variance <= 1e-30


@pytest.mark.parametrize("fore", ["ftl", "uniform", "mw"])
def test_matches_exact_chain(fore):
    pol = {"ftl": ForecasterPolicy.follow_the_leader(), "uniform": ForecasterPolicy.uniform(),
           "mw": ForecasterPolicy.multiplicative_weights(0.4)}[fore]
    M = 6
    exact = exact_two_expert_mean(COUNTER.mu, adversary_hat(COUNTER).as_vector(),
                                  lambda m, M, X: pol.controls(m, M, X, None), PHI, M)
    r = simulate(COUNTER, AdversaryPolicy.hat(COUNTER), pol, PHI, M, 200_000, seed=11)
    assert abs(r.mean - exact) <= 4 * r.stderr


def test_threads_and_seeds():
    args = (COUNTER, AdversaryPolicy.hat(COUNTER), ForecasterPolicy.follow_the_leader(), PHI, 12, 5000)
    a = simulate(*args, seed=4, threads=1, block=1000)
    b = simulate(*args, seed=4, threads=3, block=1000)
    c = simulate(*args, seed=5, threads=1, block=1000)
    assert np.array_equal(a.terminal, b.terminal) and a.mean == b.mean
    assert not np.array_equal(a.terminal, c.terminal)


def test_invalid_controls_abort_with_diagnostics():
    def bad(m, M, X):
        out = np.full((X.shape[0], 2), 0.5)
        out[0] = [0.9, 0.3]
        return out

    r = simulate(COUNTER, AdversaryPolicy.hat(COUNTER), ForecasterPolicy.custom(lambda m, M, X, A: bad(m, M, X)),
                 PHI, 3, 50, block=25)
    assert r.aborted == 2 and r.replications == 48
    assert any("forecaster" in d for d in r.diagnostics)

    adv = AdversaryPolicy.custom(lambda m, M, X: np.full((X.shape[0], 4), np.nan), COUNTER)
    with pytest.raises(InvalidInputError, match="every replication aborted"):
        simulate(COUNTER, adv, ForecasterPolicy.uniform(), PHI, 2, 10)
    with pytest.raises(InvalidInputError, match="shape"):
        simulate(COUNTER, AdversaryPolicy.custom(lambda m, M, X: np.ones((1, 4)) / 4, COUNTER),
                 ForecasterPolicy.uniform(), PHI, 2, 10)
    with pytest.raises(InvalidInputError):
        simulate(COUNTER, AdversaryPolicy.hat(COUNTER), ForecasterPolicy.uniform(), PHI, 2, 0)


def test_dp_replay_recovers_value():
    M = 8
    t = solve_value(M, COUNTER, PHI)
    r = simulate(COUNTER, AdversaryPolicy.dp(t, COUNTER), ForecasterPolicy.dp(t), PHI, M, 200_000, seed=2)
    assert abs(r.mean - t.value(0, [0])) <= 4 * r.stderr
    # against the DP adversary no forecaster does better than the value
    r = simulate(COUNTER, AdversaryPolicy.dp(t, COUNTER), ForecasterPolicy.follow_the_leader(), PHI, M,
                 200_000, seed=2)
    assert r.mean >= t.value(0, [0]) - 4 * r.stderr


def test_z_tracking_under_constant_balanced_control():
    an = analyze_balanced(COUNTER)
    from limadv.balanced import construct_balanced
    adv = AdversaryPolicy.constant(construct_balanced(0.5, COUNTER), COUNTER)
    r = simulate(COUNTER, adv, ForecasterPolicy.uniform(), PHI, 20, 20_000, seed=6, track_z=True)
    # balanced: both experts gain 1/2 on average, so Z = X1 - X2 has no drift
    assert abs(r.z_step_mean) <= 4 * math.sqrt(r.z_step_var / r.z_step_count)
    assert r.z_step_count == 20 * 20_000 and r.z_path_mean.shape == (21,)
    assert an.c_min <= 0.5 <= an.c_max


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**20))
def test_terminal_values_are_bounded(mu1, mu2, seed):
    m = ExpertModel([mu1, mu2])
    r = simulate(m, AdversaryPolicy.hat(m), ForecasterPolicy.follow_the_leader(), FinalCondition.max(), 5, 200,
                 seed=seed)
    # regret against the best expert never exceeds the number of rounds
    assert np.all(np.abs(r.terminal) <= 5)
