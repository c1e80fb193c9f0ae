"""Balanced adversary controls, the Hamiltonians H and H_B, and the delta gap.

A control is balanced when every expert ends up with the same expected gain
``c``.  Such a ``c`` exists iff the convex piecewise-linear dispersion
``s(c)`` dips to 1 or below; the generous (``c_max``) and greedy (``c_min``)
adversaries sit at the two ends of that sublevel set.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleError, InvalidInputError, NumericalError
from .game_core import (
    AdversaryControl, ExpertModel, _all_outcomes, expected_gain, vertex_gains,
)

FEAS_TOL = 1e-10


# --- dispersion ---------------------------------------------------------------


def _ratio(num: float, den: float) -> float:
    # 0/0 = 0; sign(num) * inf otherwise when den == 0
    if den > 0:
        with np.errstate(over="ignore"):     # subnormal den: inf is the right answer
            return num / den
    if num > 0:
        return np.inf
    if num < 0:
        return -np.inf
    return 0.0


def dispersion(c: float, model: ExpertModel) -> float:
    if not (0.0 <= c <= 1.0):
        raise InvalidInputError(f"c={c} outside [0, 1]")
    total = 0.0
    for m in model.mu:
        total += max(_ratio(m - c, m), _ratio(c - m, 1.0 - m))
    return total


@dataclass(frozen=True)
class SigmaPair:
    sigma1: np.ndarray
    sigma2: np.ndarray

    @classmethod
    def from_model(cls, model: ExpertModel) -> "SigmaPair":
        mu = model.mu
        s1 = mu[:, None] + mu[None, :]
        np.fill_diagonal(s1, 1.0)
        s2 = np.outer(mu, mu)
        np.fill_diagonal(s2, 0.0)
        return cls(s1, s2)


@dataclass(frozen=True)
class BalancedAnalysis:
    feasible: bool
    s_min: float
    argmin_c: float
    c_min: float | None = None
    c_max: float | None = None

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "c_min": self.c_min,
            "c_max": self.c_max,
            "argmin_c": self.argmin_c,
            "s_min": self.s_min,
        }


def _breakpoints(model: ExpertModel) -> np.ndarray:
    return np.unique(np.concatenate([[0.0, 1.0], model.mu]))


def _level_crossing(lo: float, hi: float, s_lo: float, s_hi: float, level: float, tol: float):
    """Root of s(c) = level on [lo, hi] where s is linear; bisection fallback."""
    if np.isfinite(s_lo) and np.isfinite(s_hi) and s_hi != s_lo:
        return lo + (level - s_lo) * (hi - lo) / (s_hi - s_lo)
    raise NumericalError("non-finite dispersion on a linear piece")


def balance_extremes_lp(model: ExpertModel) -> tuple[float, float] | None:
    """min / max of the common gain over balanced controls, by linear programming.

    Variables are ``(a, b, c)``; returns None when no balanced control exists.
    """
    n = model.n_experts
    mu = model.mu
    # (1 - a_i - b_i) mu_i + b_i - c = 0  ->  -mu_i a_i + (1 - mu_i) b_i - c = -mu_i
    A_eq = np.zeros((n + 1, 2 * n + 1))
    b_eq = np.zeros(n + 1)
    for i in range(n):
        A_eq[i, i] = -mu[i]
        A_eq[i, n + i] = 1.0 - mu[i]
        A_eq[i, -1] = -1.0
        b_eq[i] = -mu[i]
    A_eq[n, :2 * n] = 1.0
    b_eq[n] = 1.0
    bounds = [(0.0, 1.0)] * (2 * n) + [(0.0, 1.0)]
    out = []
    for sign in (1.0, -1.0):
        cost = np.zeros(2 * n + 1)
        cost[-1] = sign
        res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise NumericalError(f"balance LP failed: {res.message}")
        out.append(res.x[-1])
    return out[0], out[1]


def analyze_balanced(model: ExpertModel, tol: float = 1e-12, validate: bool = True) -> BalancedAnalysis:
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    bps = _breakpoints(model)
    vals = np.array([dispersion(c, model) for c in bps])
    k = int(np.argmin(vals))
    s_min, argmin_c = float(vals[k]), float(bps[k])
    feasible = s_min <= 1.0 + FEAS_TOL
    if not feasible:
        if validate and balance_extremes_lp(model) is not None:
            raise NumericalError("LP finds a balanced control the dispersion test rejects")
        return BalancedAnalysis(False, s_min, argmin_c)

    if s_min > 1.0:
        # touches the level only within tolerance: the balanced set is one point
        c_min = c_max = argmin_c
    else:
        if vals[0] <= 1.0:
            c_min = 0.0
        else:
            j = next(i for i in range(k + 1) if vals[i] <= 1.0)
            c_min = _level_crossing(bps[j - 1], bps[j], vals[j - 1], vals[j], 1.0, tol)
        if vals[-1] <= 1.0:
            c_max = 1.0
        else:
            j = max(i for i in range(k, len(bps)) if vals[i] <= 1.0)
            c_max = _level_crossing(bps[j], bps[j + 1], vals[j], vals[j + 1], 1.0, tol)
    c_min = min(max(c_min, 0.0), argmin_c)
    c_max = max(min(c_max, 1.0), argmin_c)

    if validate:
        ext = balance_extremes_lp(model)
        if ext is None or abs(ext[0] - c_min) > 1e-8 or abs(ext[1] - c_max) > 1e-8:
            raise NumericalError(
                f"dispersion extremes ({c_min}, {c_max}) disagree with LP {ext}"
            )
    return BalancedAnalysis(True, s_min, argmin_c, float(c_min), float(c_max))


# --- construction -------------------------------------------------------------


def _balanced_lp(c: float, model: ExpertModel) -> AdversaryControl:
    n = model.n_experts
    mu = model.mu
    A_eq = np.zeros((n + 1, 2 * n))
    b_eq = np.zeros(n + 1)
    for i in range(n):
        A_eq[i, i] = -mu[i]
        A_eq[i, n + i] = 1.0 - mu[i]
        b_eq[i] = c - mu[i]
    A_eq[n] = 1.0
    b_eq[n] = 1.0
    res = linprog(np.zeros(2 * n), A_eq=A_eq, b_eq=b_eq, bounds=[(0, 1)] * (2 * n), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"no balanced control with common gain {c}")
    return AdversaryControl.from_vector(np.clip(res.x, 0, None) / np.clip(res.x, 0, None).sum())


def construct_balanced(c: float, model: ExpertModel) -> AdversaryControl:
    """Explicit balanced control with common expected gain ``c``.

    Experts above ``c`` are pulled down and experts below ``c`` pushed up, each
    receiving corruption mass proportional to its dispersion term.
    """
    s = dispersion(c, model)
    if s > 1.0 + FEAS_TOL:
        raise InfeasibleError(f"s({c}) = {s} > 1: no balanced control at this level")
    mu = model.mu
    n = model.n_experts
    if s == 0.0:
        # every mu equals c; corrupting expert 0 with a Bernoulli(c) pin keeps it at c
        warnings.warn("all accuracies equal c; returning single-expert corruption", stacklevel=2)
        v = np.zeros(2 * n)
        v[0], v[n] = 1.0 - c, c
        return AdversaryControl.from_vector(v)

    a = np.zeros(n)
    b = np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(n):
            m = mu[j]
            if c > m:
                a[j] = (c - m) * (1.0 / s - 1.0)
                b[j] = (c - m) * (1.0 + m / (s * (1.0 - m)))
            elif c < m:
                a[j] = (m - c) * ((1.0 - m) / (s * m) + 1.0)
                b[j] = (m - c) * (1.0 / s - 1.0)
    v = np.concatenate([a, b])
    ok = np.all(np.isfinite(v)) and np.all(v >= -FEAS_TOL) and abs(v.sum() - 1.0) <= FEAS_TOL
    if ok:
        alpha = AdversaryControl.from_vector(np.clip(v, 0.0, None) / np.clip(v, 0.0, None).sum())
        if np.max(np.abs(expected_gain(alpha, model) - c)) <= FEAS_TOL:
            return alpha
    # accuracies at 0 or 1 can break the closed form; the LP always works when s <= 1
    return _balanced_lp(c, model)


# --- Hamiltonians ---------------------------------------------------------------


def second_moments_at_vertices(model: ExpertModel) -> np.ndarray:
    """E[dG dG^T] under each pure corruption, shape (2N, N, N)."""
    n = model.n_experts
    mu = model.mu
    out = np.empty((2 * n, n, n))
    for k in range(2 * n):
        j, v = k % n, k // n
        m = mu.copy()
        m[j] = v
        q = np.outer(m, m)
        np.fill_diagonal(q, m)
        out[k] = q
    return out


def hamiltonian_HB(S, analysis: BalancedAnalysis, sigmas: SigmaPair) -> tuple[float, float]:
    """Returns ``(value, c_star)``; ties at Tr(Sigma1 S) = 0 resolve to ``c_min``."""
    if not analysis.feasible:
        raise InfeasibleError("H_B is undefined when no balanced control exists")
    S = np.asarray(S, dtype=float)
    t1 = float(np.sum(sigmas.sigma1 * S))
    t2 = float(np.sum(sigmas.sigma2 * S))
    c_star = analysis.c_max if t1 > 0 else analysis.c_min
    return 0.5 * (c_star * t1 - t2), c_star


def hamiltonian_H(p, S, model: ExpertModel) -> float:
    """Max of 1/2 <S, E[dG dG^T]> over controls whose support-of-p experts tie for the top gain."""
    p = np.asarray(p, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(p < 0):
        raise InvalidInputError("p must be componentwise nonnegative")
    n = model.n_experts
    Q = second_moments_at_vertices(model)
    obj = -0.5 * np.einsum("kij,ij->k", Q, S)
    C = vertex_gains(model)  # (2N, N)
    rows = []
    for i in np.flatnonzero(p > 0):
        for j in range(n):
            if j != i:
                rows.append(C[:, j] - C[:, i])  # c_j - c_i <= 0
    A_ub = np.array(rows) if rows else None
    b_ub = np.zeros(len(rows)) if rows else None
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=np.ones((1, 2 * n)), b_eq=[1.0],
                  bounds=[(0, 1)] * (2 * n), method="highs")
    if res.status != 0:
        raise NumericalError(f"constraint set for H is empty: {res.message}")
    return float(-res.fun)


# --- positive definiteness ------------------------------------------------------


def check_posdef(c: float, sigmas: SigmaPair, tol: float = 1e-10) -> tuple[float, bool]:
    ev = np.linalg.eigvalsh(c * sigmas.sigma1 - sigmas.sigma2)
    lo = float(ev[0])
    return lo, lo > tol


# --- delta gap ------------------------------------------------------------------

GAP_TIE = 1e-9


def top_gap(c: np.ndarray) -> float:
    """Largest expected gain minus the largest one strictly (by > 1e-9) below it."""
    top = c.max()
    below = c[c < top - GAP_TIE]
    return float(top - below.max()) if below.size else np.inf


@dataclass(frozen=True)
class DeltaEstimate:
    value: float               # evaluated gap at ``argmin``: an upper bound on delta
    argmin: AdversaryControl
    grid: int
    resolution: float          # grid spacing on the 2N-simplex
    mean_gap: float            # inf over controls of (max gain - average gain), exact by LP


def _compositions(total: int, parts: int):
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for ct in cuts:
            out.append(ct - prev - 1)
            prev = ct
        out.append(total + parts - 2 - prev)
        yield out


def mean_gap_lp(model: ExpertModel) -> float:
    """inf over all controls of max_i c_i - mean_i c_i."""
    n = model.n_experts
    C = vertex_gains(model)
    # variables (alpha, t): minimize t - mean(c);  c_i <= t
    cost = np.concatenate([-C.mean(axis=1), [1.0]])
    A_ub = np.hstack([C.T, -np.ones((n, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(n),
                  A_eq=np.concatenate([np.ones(2 * n), [0.0]])[None, :], b_eq=[1.0],
                  bounds=[(0, 1)] * (2 * n) + [(None, None)], method="highs")
    if res.status != 0:
        raise NumericalError(res.message)
    return float(res.fun)


def compute_delta(model: ExpertModel, grid: int = 8, refine_iters: int = 30) -> DeltaEstimate:
    """Grid search plus pairwise-transfer descent for inf (top gain - runner-up gain).

    Only meaningful when no balanced control exists.  Controls whose gains
    all tie (within 1e-9) have no runner-up and are skipped.
    """
    if analyze_balanced(model, validate=False).feasible:
        raise InvalidInputError("delta is only defined when no balanced control exists")
    n2 = 2 * model.n_experts
    C = vertex_gains(model)
    pts = np.array(list(_compositions(grid, n2)), dtype=float) / grid
    gains = pts @ C
    top = gains.max(axis=1, keepdims=True)
    below = np.where(gains < top - GAP_TIE, gains, -np.inf).max(axis=1)
    gaps = top[:, 0] - below
    best = int(np.argmin(gaps))
    x = pts[best].copy()
    fx = float(gaps[best])

    step = 1.0 / grid
    for _ in range(refine_iters):
        step *= 0.5
        improved = True
        while improved:
            improved = False
            for i in range(n2):
                for j in range(n2):
                    if i == j or x[i] < step:
                        continue
                    y = x.copy()
                    y[i] -= step
                    y[j] += step
                    fy = top_gap(y @ C)
                    if fy < fx:
                        x, fx, improved = y, fy, True
    return DeltaEstimate(
        value=fx, argmin=AdversaryControl.from_vector(x / x.sum()), grid=grid,
        resolution=1.0 / grid, mean_gap=mean_gap_lp(model),
    )
