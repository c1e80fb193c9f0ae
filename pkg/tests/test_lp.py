import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

import limadv.lp as lp
from limadv.lp import solve_matrix_game


def linprog_value(A):
    """Maximizer's LP: max v s.t. (x A)_j >= v, x in simplex."""
    m, n = A.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A.T, np.ones((n, 1))])
    A_eq = np.append(np.ones(m), 0.0)[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs")
    return -res.fun


def test_matching_pennies():
    s = solve_matrix_game([[1, -1], [-1, 1]])
    assert s.value == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(s.row, [0.5, 0.5])
    np.testing.assert_allclose(s.col, [0.5, 0.5])


def test_saddle_point_in_pure_strategies():
    s = solve_matrix_game([[3, 5], [1, 4]])
    assert s.value == pytest.approx(3.0)
    np.testing.assert_allclose(s.row, [1, 0])
    np.testing.assert_allclose(s.col, [1, 0])


def test_degenerate_constant_game():
    s = solve_matrix_game(np.full((4, 2), 0.7))
    assert s.value == pytest.approx(0.7)
    assert s.gap == pytest.approx(0.0, abs=1e-14)


def test_tie_breaking_is_deterministic():
    A = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    first = solve_matrix_game(A)
    for _ in range(3):
        again = solve_matrix_game(A)
        assert np.array_equal(first.row, again.row) and np.array_equal(first.col, again.col)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8).flatmap(lambda m: st.integers(1, 5).flatmap(
    lambda n: arrays(float, (m, n), elements=st.floats(-5, 5, allow_nan=False)))))
def test_value_matches_linprog(A):
    s = solve_matrix_game(A)
    assert s.gap <= 1e-11
    # HiGHS works to ~1e-8 on its own; our gap above is the tight certificate
    assert s.value == pytest.approx(linprog_value(A), abs=1e-7)
    assert s.row.min() >= 0 and s.col.min() >= 0
    assert s.row.sum() == pytest.approx(1.0) and s.col.sum() == pytest.approx(1.0)


def test_tiny_forced_pivot_keeps_precision():
    # the ratio test must pivot on 2^-24 here; the final basis re-solve restores the digits
    e = 2.0**-24
    A = np.array([[0, 2, 2, 2, 2], [0, 2, 2, 2, 2], [2, 0, 2, 2, 2], [2, e, 2, 2, 2.0]])
    s = solve_matrix_game(A)
    assert s.gap <= 1e-14
    assert s.value == pytest.approx(4 / (4 - e), abs=1e-15)


near_degenerate = st.integers(2, 8).flatmap(lambda m: st.integers(1, 4).flatmap(lambda n: st.tuples(
    arrays(float, (m, n), elements=st.sampled_from([0.0, 1.0, 2.0, 3.0, 0.363])),
    arrays(float, (m, n), elements=st.sampled_from([0.0, 0.0, 1e-9, -1e-9, 2.0**-24, 1e-15])),
)))


@settings(max_examples=300, deadline=None)
@given(near_degenerate)
def test_near_duplicate_rows(parts):
    base, eps = parts
    assert solve_matrix_game(base + eps).gap <= 1e-11


@settings(max_examples=300, deadline=None)
@given(near_degenerate)
def test_revised_simplex_alone(parts):
    A = parts[0] + parts[1]
    s = lp._certified(A, lp._revised_max_sum, lp.RATIO_TOL)
    # Harris steps may overshoot by RATIO_TOL, measured in units of the shifted matrix
    assert s.gap <= 2 * lp.RATIO_TOL * (1.0 + A.max() - A.min())


def test_tableau_breakdown_is_caught():
    # a forced pivot on ~3e-9 wrecks the dense tableau (gap ~0.36)
    A = np.array([[2.0, -1e-9, 0.363 - 1e-9, 0.363 + 2.0**-24],
                  [2.0, 0.363 + 2.0**-24, 0.363, 3.0],
                  [0.363 + 1e-9, 0.363 + 2.0**-24, 0.363 + 2.0**-24, 1e-15]])
    assert lp._certified(A, lp._tableau_max_sum, lp.RATIO_TOL).gap > 0.1
    s = solve_matrix_game(A)
    assert s.gap <= 1e-11
    assert s.value == pytest.approx(linprog_value(A), abs=1e-7)


def test_harris_overshoot_case_is_refined():
    A = np.array([[2.0, 0, 1, 0], [2, 0, 0, 0], [0, 0, 0, 0]]) - 1e-9
    A[1, 1] = 0.0
    s = solve_matrix_game(A)
    # entries differ by less than the Harris tolerance; the strict pass resolves them
    assert s.gap <= 1e-11 and s.value == pytest.approx(-1e-9, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda m: st.integers(1, 4).flatmap(
    lambda n: arrays(float, (m, n), elements=st.sampled_from([0.0, 0.5, 1.0, 2.0])))))
def test_dominance_reduction_keeps_value(A):
    rows, cols = lp._undominated(A)
    assert len(rows) and len(cols)
    R = A[np.ix_(rows, cols)]
    assert linprog_value(R) == pytest.approx(linprog_value(A), abs=1e-9)
    # every removed row has a kept row at least as good
    for r in set(range(A.shape[0])) - set(rows):
        assert any(np.all(A[k, cols] >= A[r, cols]) for k in rows)
