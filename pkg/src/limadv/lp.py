"""Revised simplex for small zero-sum matrix games.

The per-state saddle problems of the dynamic program are tiny (2N x N with
N <= 4), so a hand-rolled solver beats the setup cost of a general LP
library by a wide margin.  A dense tableau runs first.  Its answer is
certified by the duality gap, and if the gap exceeds ``GAP_REFINE`` (a forced
pivot on a tiny entry pollutes the tableau) the game is reduced by weak
dominance and solved by a revised simplex that re-solves the basis system
from the original matrix each iteration, then with the textbook ratio test,
then by HiGHS; the best certificate wins.  All simplex runs use Bland's rule
for the entering column and a Harris two-pass ratio test for the leaving row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError

PIVOT_TOL = 1e-12
RATIO_TOL = 1e-9
GAP_REFINE = 1e-11


@dataclass(frozen=True)
class GameSolution:
    value: float
    row: np.ndarray   # maximizer's mixed strategy
    col: np.ndarray   # minimizer's mixed strategy
    gap: float        # max_i (A col)_i - min_j (row A)_j, >= 0 up to rounding


def _revised_max_sum(B: np.ndarray, ratio_tol: float = RATIO_TOL, max_iter: int = 500):
    """maximize 1.y  s.t.  B y <= 1, y >= 0   (B > 0 elementwise).

    Returns (y, x) where x are the dual prices of the m constraints.
    """
    m, n = B.shape
    full = np.hstack([B, np.eye(m)])
    cost = np.append(np.ones(n), np.zeros(m))
    basis = list(range(n, n + m))
    ones = np.ones(m)
    for _ in range(max_iter):
        Bb = full[:, basis]
        try:
            price = np.linalg.solve(Bb.T, cost[basis])
        except np.linalg.LinAlgError:
            raise NumericalError("singular simplex basis") from None
        reduced = cost - price @ full
        reduced[basis] = 0.0
        entering = next((j for j in range(n + m) if reduced[j] > PIVOT_TOL), -1)
        rhs_cols = np.column_stack([ones, full[:, max(entering, 0)]])
        xb, col = np.linalg.solve(Bb, rhs_cols).T
        if entering < 0:
            break
        rhs = np.maximum(xb, 0.0)
        # Harris two-pass ratio test: allow a ratio_tol overshoot, then take the
        # largest pivot among the admissible rows (ties: lowest basis index)
        ok = col > PIVOT_TOL
        if not ok.any():
            raise NumericalError("unbounded game LP (cannot happen for B > 0)")
        bound = np.min((rhs[ok] + ratio_tol) / col[ok])
        leave_row = -1
        for i in range(m):
            if ok[i] and rhs[i] / col[i] <= bound:
                if leave_row < 0 or col[i] > col[leave_row] or (
                    col[i] == col[leave_row] and basis[i] < basis[leave_row]
                ):
                    leave_row = i
        basis[leave_row] = entering
    else:
        raise NumericalError("simplex iteration limit reached")
    y = np.zeros(n + m)
    y[basis] = xb
    return np.clip(y[:n], 0.0, None), np.clip(price, 0.0, None)


def _tableau_max_sum(B: np.ndarray, ratio_tol: float = RATIO_TOL, max_iter: int = 500):
    """Same LP as ``_revised_max_sum`` with incremental tableau updates.

    Cheaper per iteration, but a forced pivot on a tiny entry pollutes every
    later row operation, so its output is only trusted after certification.
    """
    m, n = B.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = B
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = 1.0
    T[m, :n] = -1.0
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        obj = T[m, :-1]
        entering = -1
        for j in range(n + m):
            if obj[j] < -PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            break
        col = T[:m, entering]
        rhs = np.maximum(T[:m, -1], 0.0)
        # Harris two-pass ratio test: allow a RATIO_TOL overshoot, then take the
        # largest pivot among the admissible rows (ties: lowest basis index)
        ok = col > PIVOT_TOL
        if not ok.any():
            raise NumericalError("unbounded game LP (cannot happen for B > 0)")
        bound = np.min((rhs[ok] + ratio_tol) / col[ok])
        leave_row = -1
        for i in range(m):
            if ok[i] and rhs[i] / col[i] <= bound:
                if leave_row < 0 or col[i] > col[leave_row] or (
                    col[i] == col[leave_row] and basis[i] < basis[leave_row]
                ):
                    leave_row = i
        T[leave_row] /= T[leave_row, entering]
        pivot_row = T[leave_row]
        for i in range(m + 1):
            if i != leave_row and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * pivot_row
        basis[leave_row] = entering
    else:
        raise NumericalError("simplex iteration limit reached")
    # tiny forced pivots can cost digits in the tableau, so re-solve from the final basis
    full = np.hstack([B, np.eye(m)])
    Bb = full[:, basis]
    cb = np.array([1.0 if b < n else 0.0 for b in basis])
    try:
        yb = np.linalg.solve(Bb, np.ones(m))
        x = np.linalg.solve(Bb.T, cb)
    except np.linalg.LinAlgError:
        yb = T[:m, -1]
        x = T[m, n:n + m].copy()
    y = np.zeros(n + m)
    y[basis] = yb
    return np.clip(y[:n], 0.0, None), np.clip(x, 0.0, None)


def solve_matrix_game(A) -> GameSolution:
    """Value and optimal strategies of the zero-sum game with payoff ``A``.

    Rows belong to the maximizer, columns to the minimizer.
    """
    A = np.asarray(A, dtype=float)
    sol = _certified(A, _tableau_max_sum, RATIO_TOL)
    if sol.gap <= GAP_REFINE:
        return sol
    rows, cols = _undominated(A)
    R = A[np.ix_(rows, cols)]
    tiers = (lambda: _certified(R, _revised_max_sum, RATIO_TOL),
             lambda: _certified(R, _revised_max_sum, 0.0), lambda: _highs(R))
    best = None
    for tier in tiers:
        try:
            alt = tier()
        except NumericalError:
            continue
        if best is None or alt.gap < best.gap:
            best = alt
        if best.gap <= GAP_REFINE:
            break
    if best is None:
        return sol
    row = np.zeros(A.shape[0])
    col = np.zeros(A.shape[1])
    row[rows] = best.row
    col[cols] = best.col
    full = _certify(A, row, col)
    return full if full.gap < sol.gap else sol


def _undominated(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Iterated removal of weakly dominated rows and columns (exact comparisons).

    Neither the value nor the optimality of the reduced game's strategies,
    padded with zeros, is affected.  Among identical lines the lowest index
    stays, so every removed line has a kept dominator.
    """
    rows = np.arange(A.shape[0])
    cols = np.arange(A.shape[1])
    while True:
        S = A[np.ix_(rows, cols)]
        dr = _dominated(S)
        dc = _dominated(-S.T)
        if not dr.any() and not dc.any():
            return rows, cols
        rows, cols = rows[~dr], cols[~dc]


def _dominated(S: np.ndarray) -> np.ndarray:
    """Rows r with some other row s >= r, strictly somewhere or with s < r."""
    ge = np.all(S[:, None, :] >= S[None, :, :], axis=2)     # ge[s, r]: row s >= row r
    gt = np.any(S[:, None, :] > S[None, :, :], axis=2)
    k = S.shape[0]
    earlier = np.tri(k, k, -1, dtype=bool).T                  # earlier[s, r]: s < r
    return np.any(ge & (gt | earlier), axis=0)


def _certified(A: np.ndarray, lp, ratio_tol: float) -> GameSolution:
    B = A + (1.0 - A.min())
    y, x = lp(B, ratio_tol)
    sy, sx = y.sum(), x.sum()
    if sy <= 0 or sx <= 0:
        raise NumericalError("degenerate simplex output")
    col = np.clip(y / sy, 0.0, None)
    row = np.clip(x / sx, 0.0, None)
    return _certify(A, row / row.sum(), col / col.sum())


def _certify(A: np.ndarray, row: np.ndarray, col: np.ndarray) -> GameSolution:
    upper = float(np.max(A @ col))
    lower = float(np.min(row @ A))
    return GameSolution(value=0.5 * (upper + lower), row=row, col=col, gap=upper - lower)


def _highs(A: np.ndarray) -> GameSolution:
    """Both players' LPs through scipy's HiGHS; used only as a fallback."""
    m, n = A.shape

    def side(P):
        # max v s.t. (p P)_j >= v, p in simplex
        k, l = P.shape
        res = linprog(np.append(np.zeros(k), -1.0), A_ub=np.hstack([-P.T, np.ones((l, 1))]),
                      b_ub=np.zeros(l), A_eq=np.append(np.ones(k), 0.0)[None, :], b_eq=[1.0],
                      bounds=[(0, None)] * k + [(None, None)], method="highs")
        if res.status != 0:
            raise NumericalError(f"fallback LP failed: {res.message}")
        p = np.clip(res.x[:k], 0.0, None)
        return p / p.sum()

    return _certify(A, side(A), side(-A.T))
