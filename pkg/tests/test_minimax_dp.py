import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from limadv.errors import CapacityError, InvalidInputError, NumericalError
from limadv.game_core import ExpertModel, FinalCondition, vertex_gains
from limadv.minimax_dp import (
    LatticeState, check_apriori_bound, scaled_lookup, scaled_value, solve_full_adversary,
    solve_value, step_value,
)

from oracles import brute_force_values

COUNTER = ExpertModel([0.75, 0.25])


def lp_game_value(A):
    m, n = A.shape
    res = linprog(np.append(np.zeros(m), -1.0), A_ub=np.hstack([-A.T, np.ones((n, 1))]), b_ub=np.zeros(n),
                  A_eq=np.append(np.ones(m), 0.0)[None, :], b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    return -res.fun


def unreduced_value(mu, M, phi):
    """V(0, 0) by recursion on the full lattice Z^N, no translation reduction."""
    n = len(mu)
    rows = []
    for j, v in itertools.product(range(n), (0, 1)):
        atoms = []
        for g in itertools.product((0, 1), repeat=n):
            if g[j] != v:
                continue
            p = np.prod([mu[i] if g[i] else 1 - mu[i] for i in range(n) if i != j])
            if p > 0:
                atoms.append((np.array(g), p))
        rows.append(atoms)

    @lru_cache(maxsize=None)
    def V(m, x):
        xa = np.array(x)
        if m == M:
            return float(phi(xa.astype(float)))
        A = np.zeros((len(rows), n))
        for k, atoms in enumerate(rows):
            for g, p in atoms:
                for i in range(n):
                    A[k, i] += p * V(m + 1, tuple(xa + g - g[i]))
        return lp_game_value(A)

    return V(0, (0,) * n)


# --- one state --------------------------------------------------------------------


def test_step_constant_successor():
    # v(m+1, .) = K in reduced coordinates means V(m+1, x) = x_N + K, so the
    # one-round value is K - min over controls of (max_i c_i - c_N)
    K = 2.5
    for mu in ([0.75, 0.25], [0.3, 0.6], [0.2, 0.5, 0.9], [0.1, 0.3, 0.5, 0.7]):
        m = ExpertModel(mu)
        n = m.n_experts
        C = vertex_gains(m)
        cost = np.append(-C[:, -1], 1.0)
        res = linprog(cost, A_ub=np.hstack([C.T, -np.ones((n, 1))]), b_ub=np.zeros(n),
                      A_eq=np.append(np.ones(2 * n), 0.0)[None, :], b_eq=[1.0],
                      bounds=[(0, 1)] * (2 * n) + [(None, None)], method="highs")
        r = step_value(lambda z: K, LatticeState((0,) * (n - 1)), m)
        assert r.value == pytest.approx(K - res.fun, abs=1e-9)


def test_step_tiny_game():
    nxt = {(-1,): 0.0, (0,): 0.0, (1,): 1.0}
    r = step_value(nxt, LatticeState((0,)), ExpertModel([1.0, 1.0]))
    assert r.value == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(r.alpha_star.a, [0.5, 0.5], atol=1e-12)
    assert r.duality_gap <= 1e-12
    r = step_value(nxt, LatticeState((0,), offset=3.0), ExpertModel([1.0, 1.0]))
    assert r.value == pytest.approx(3.5)


def test_step_matches_grid_oracle():
    ref = brute_force_values(0.75, 0.25, 1)[0][0]
    r = step_value(lambda z: max(z[0], 0), LatticeState((0,)), COUNTER)
    assert abs(r.value - ref) <= 2e-3


def test_step_missing_successor():
    with pytest.raises(NumericalError, match="missing"):
        step_value({(0,): 0.0}, LatticeState((0,)), COUNTER)
    with pytest.raises(InvalidInputError):
        step_value({}, LatticeState((0, 0)), COUNTER)


# --- whole tables ----------------------------------------------------------------------


def test_terminal_only():
    t = solve_value(0, ExpertModel([0.2, 0.4, 0.6]), FinalCondition.max(), extra=2)
    assert t.value(0, [0, 0]) == 0.0
    assert t.full_value(0, [3.0, 1.0, 2.0]) == 3.0


def test_tiny_game_table():
    t = solve_value(1, ExpertModel([1.0, 1.0]), FinalCondition.max())
    assert t.value(0, [0]) == pytest.approx(0.5, abs=1e-12)
    assert scaled_value(t, 0.0, [0.0, 0.0]) == pytest.approx(0.5, abs=1e-12)
    assert t.meta["translation"]
    with pytest.raises(InvalidInputError):
        t.saddle(1, [0])


@pytest.mark.parametrize("mu, M", [([0.6, 0.3, 0.8], 3), ([0.5, 0.5, 0.2], 2), ([0.75, 0.25], 4)])
def test_reduction_matches_unreduced_recursion(mu, M):
    phi = FinalCondition.max_theta(0.2)
    t = solve_value(M, ExpertModel(mu), phi)
    assert t.value(0, np.zeros(len(mu) - 1, int)) == pytest.approx(unreduced_value(mu, M, phi), abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(arrays(float, 3, elements=st.floats(0, 1)), st.integers(-3, 3), st.integers(-2, 2), st.integers(-2, 2))
def test_translation_equivariance(mu, k, z1, z2):
    t = solve_value(3, ExpertModel(mu), FinalCondition.max(), extra=2)
    x = np.array([z1, z2, 0])
    assert t.full_value(1, x + k) == pytest.approx(t.full_value(1, x) + k, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(arrays(float, 2, elements=st.floats(0, 1)), st.floats(0.0, 0.9))
def test_value_monotone_in_final_condition(mu, theta):
    m = ExpertModel(mu)
    a = solve_value(6, m, FinalCondition.max())
    b = solve_value(6, m, FinalCondition.max_theta(theta))
    for k in range(7):
        assert np.all(b.values[k] <= a.values[k] + 1e-12)


def test_threads_do_not_change_output():
    m = ExpertModel([0.6, 0.3, 0.5])
    a = solve_value(9, m, FinalCondition.max_theta(0.1), threads=1)
    b = solve_value(9, m, FinalCondition.max_theta(0.1), threads=4)
    for k in range(10):
        assert np.array_equal(a.values[k], b.values[k])
        assert np.array_equal(a.controls[k], b.controls[k], equal_nan=True)


def test_controls_are_distributions():
    t = solve_value(5, ExpertModel([0.2, 0.5, 0.7]), FinalCondition.max())
    for k in range(5):
        assert np.allclose(t.controls[k].sum(axis=1), 1.0) and t.controls[k].min() >= 0
        assert np.allclose(t.phis[k].sum(axis=1), 1.0) and t.phis[k].min() >= 0
        assert t.gaps[k].max() <= 1e-9


def test_capacity_and_input_errors():
    with pytest.raises(CapacityError):
        solve_value(2, ExpertModel([0.5] * 5), FinalCondition.max())
    with pytest.raises(CapacityError, match="states"):
        solve_value(200, ExpertModel([0.5] * 4), FinalCondition.max())
    with pytest.raises(InvalidInputError):
        solve_value(-1, COUNTER, FinalCondition.max())
    with pytest.raises(InvalidInputError, match="homogeneous"):
        solve_value(2, COUNTER, FinalCondition.custom(lambda x: np.max(x, axis=-1) ** 3))


def test_custom_final_condition_is_audited_and_used():
    custom = FinalCondition.custom(lambda x: np.max(x, axis=-1))
    a = solve_value(4, COUNTER, custom)
    b = solve_value(4, COUNTER, FinalCondition.max())
    assert a.meta.get("audited")
    np.testing.assert_allclose(a.values[0], b.values[0], atol=1e-14)


# --- full adversary -----------------------------------------------------------------------


def test_full_adversary_tiny():
    w = solve_full_adversary(1, 2, FinalCondition.max())
    assert w.value(0, [0]) == pytest.approx(0.5, abs=1e-12)
    q = w.saddle(0, [0]).q_star      # order of outcomes: (0,0), (0,1), (1,0), (1,1)
    assert q[1] == pytest.approx(0.5) and q[2] == pytest.approx(0.5)
    assert solve_full_adversary(0, 3, FinalCondition.max(), extra=2).value(0, [1, -2]) == 1.0


@settings(max_examples=10, deadline=None)
@given(arrays(float, 2, elements=st.floats(0, 1)))
def test_full_adversary_dominates(mu):
    phi = FinalCondition.max_theta(0.1)
    v = solve_value(8, ExpertModel(mu), phi)
    w = solve_full_adversary(8, 2, phi)
    for k in range(9):
        assert np.all(w.values[k] >= v.values[k] - 1e-12)


# --- scaled lookups and the a-priori bound ----------------------------------------------------


def test_scaled_value_terminal_is_phi():
    phi = FinalCondition.max_theta(0.1)
    t = solve_value(16, COUNTER, phi, extra=8)
    x = np.array([0.5, -0.25])       # sqrt(16) x is on the lattice
    assert scaled_value(t, 1.0, x) == pytest.approx(float(phi(x)), abs=1e-14)
    lk = scaled_lookup(t, 0.5, [0.1, 0.0])
    assert lk.slice == 8 and lk.z == (0,) and lk.rounding_distance == pytest.approx(0.4)
    with pytest.raises(InvalidInputError, match="outside"):
        scaled_value(t, 0.0, [10.0, 0.0])


def test_scaled_rounding_ties_toward_zero():
    t = solve_value(4, COUNTER, FinalCondition.max(), extra=3)
    assert scaled_lookup(t, 0.0, [0.25, 0.0]).z == (0,)      # sqrt(4) * 0.25 = 0.5
    assert scaled_lookup(t, 0.0, [-0.25, 0.0]).z == (0,)
    assert scaled_lookup(t, 0.0, [0.3, 0.0]).z == (1,)


def test_apriori_bound_stable_across_horizons():
    phi = FinalCondition.max_theta(0.1)
    r64 = check_apriori_bound(solve_value(64, COUNTER, phi))
    r128 = check_apriori_bound(solve_value(128, COUNTER, phi))
    assert r64.max_deviation[-1] == 0.0 and r128.max_deviation[-1] == 0.0
    assert abs(r64.linear_fit_C - r128.linear_fit_C) <= 0.25 * r64.linear_fit_C
    assert np.all(r64.max_deviation <= r64.linear_fit_C * (2 - r64.t) + 1e-15)
