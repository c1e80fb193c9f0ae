"""Exact backward induction for the finite-horizon game on the integer lattice.

Translation equivariance lets us write ``V(m, x) = x_N + v(m, z)`` with
``z_i = x_i - x_N`` for ``i < N``, so only an (N-1)-dimensional lattice is
stored.  Each state's one-round problem is a zero-sum matrix game: rows are
the 2N pure corruptions (the adversary's expected payoff is affine on the
simplex), columns are the N experts the forecaster can follow.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InvalidInputError, NumericalError
from .game_core import (
    AdversaryControl, ExpertModel, FinalCondition, ForecasterControl,
    check_final_condition, vertex_gains,
)
from .lp import solve_matrix_game

MAX_DP_EXPERTS = 4
MAX_STATES_PER_SLICE = 2_000_000
GAP_TOL = 1e-8


@dataclass(frozen=True)
class LatticeState:
    z: tuple[int, ...]
    offset: float = 0.0


@dataclass(frozen=True)
class SaddleResult:
    value: float
    alpha_star: AdversaryControl | None
    phi_star: ForecasterControl
    duality_gap: float
    q_star: np.ndarray | None = None   # full-adversary law on {0,1}^N, when applicable


@dataclass
class ValueTable:
    """Values ``v(m, z)`` on slices ``m = 0..M``.

    Slice ``m`` stores the cube ``|z_i| <= radius[m]`` in C order, so the
    state ``z`` sits at flat index ``ravel(z + radius[m])``.  Controls are
    NaN on the terminal slice.
    """

    horizon: int
    n_experts: int
    final: FinalCondition
    radius: list[int]
    values: list[np.ndarray]
    controls: list[np.ndarray]        # (states, K) adversary law; K = 2N or 2^N
    phis: list[np.ndarray]            # (states, N)
    gaps: list[np.ndarray]
    full_adversary: bool = False
    meta: dict = field(default_factory=dict)

    def shape(self, m: int) -> tuple[int, ...]:
        return (2 * self.radius[m] + 1,) * (self.n_experts - 1)

    def index(self, m: int, z) -> int:
        z = np.asarray(z, dtype=int)
        r = self.radius[m]
        if np.any(np.abs(z) > r):
            raise InvalidInputError(f"state {z.tolist()} outside slice {m} (radius {r})")
        return int(np.ravel_multi_index(tuple(z + r), self.shape(m)))

    def states(self, m: int) -> np.ndarray:
        r = self.radius[m]
        grids = np.meshgrid(*([np.arange(-r, r + 1)] * (self.n_experts - 1)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def value(self, m: int, z) -> float:
        return float(self.values[m][self.index(m, z)])

    def saddle(self, m: int, z) -> SaddleResult:
        if m >= self.horizon:
            raise InvalidInputError("terminal slice has no controls")
        k = self.index(m, z)
        ctrl = self.controls[m][k]
        phi = ForecasterControl(self.phis[m][k])
        if self.full_adversary:
            return SaddleResult(float(self.values[m][k]), None, phi, float(self.gaps[m][k]), ctrl)
        return SaddleResult(float(self.values[m][k]), AdversaryControl.from_vector(ctrl), phi,
                            float(self.gaps[m][k]))

    def full_value(self, m: int, x) -> float:
        """``V(m, x)`` for an integer point ``x`` of the unreduced lattice."""
        x = np.asarray(x, dtype=float)
        return float(x[-1] + self.value(m, np.rint(x[:-1] - x[-1]).astype(int)))


# --- one-round atoms ------------------------------------------------------------


def vertex_atoms(model: ExpertModel):
    """For each pure corruption k, the law of the realized gain vector.

    Returns ``(gains, probs)`` with shapes (2N, 2^(N-1), N) and (2N, 2^(N-1)).
    The corrupted coordinate is pinned; the rest are independent Bernoullis.
    """
    n = model.n_experts
    mu = model.mu
    others = np.array(list(itertools.product((0, 1), repeat=n - 1)), dtype=np.int64)
    gains = np.empty((2 * n, others.shape[0], n), dtype=np.int64)
    probs = np.empty((2 * n, others.shape[0]))
    for k in range(2 * n):
        j, v = k % n, k // n
        rest = [i for i in range(n) if i != j]
        gains[k][:, rest] = others
        gains[k][:, j] = v
        lik = np.where(others == 1, mu[rest], 1.0 - mu[rest])
        probs[k] = np.prod(lik, axis=1)
    return gains, probs


def outcome_atoms(n: int):
    """Every point of {0,1}^N, used as a pure move by the full adversary."""
    g = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    return g[:, None, :], np.ones((g.shape[0], 1))


# --- the per-state matrix game ----------------------------------------------------


def _kahan_expect(next_vals: np.ndarray, r_next: int, r: int, gains, probs) -> np.ndarray:
    """E[g_N + v_next(z + g_{<N} - g_N)] for every z in the radius-r cube, per row.

    Returns an array (rows, *cube_shape).  Summation over atoms is compensated.
    """
    d = next_vals.ndim
    rows = gains.shape[0]
    out = np.empty((rows,) + (2 * r + 1,) * d)
    for k in range(rows):
        s = np.zeros((2 * r + 1,) * d)
        comp = np.zeros_like(s)
        for g, p in zip(gains[k], probs[k]):
            if p == 0.0:
                continue
            shift = g[:-1] - g[-1]
            sl = tuple(slice(r_next - r + sh, r_next + r + 1 + sh) for sh in shift)
            term = p * (g[-1] + next_vals[sl])
            y = term - comp
            tot = s + y
            comp = (tot - s) - y
            s = tot
        out[k] = s
    return out


def _payoff(f_row: np.ndarray, pay_gain: np.ndarray) -> np.ndarray:
    # A[k, i] = f_k - c_i(k): adversary's row value minus forecaster's expected gain
    return f_row[:, None] - pay_gain


def step_value(next_value, state: LatticeState, model: ExpertModel) -> SaddleResult:
    """Solve one state's saddle problem given successor values.

    ``next_value`` is a callable or mapping ``z tuple -> v(m+1, z)`` defined on
    every state one step away.
    """
    n = model.n_experts
    gains, probs = vertex_atoms(model)
    z = np.asarray(state.z, dtype=int)
    if z.size != n - 1:
        raise InvalidInputError(f"state must have {n - 1} relative coordinates")
    lookup = next_value if callable(next_value) else (lambda key: next_value[key])
    f = np.zeros(2 * n)
    for k in range(2 * n):
        for g, p in zip(gains[k], probs[k]):
            if p == 0.0:
                continue
            key = tuple(int(v) for v in z + g[:-1] - g[-1])
            try:
                nv = lookup(key)
            except KeyError as exc:
                raise NumericalError(f"successor state {key} missing") from exc
            f[k] += p * (g[-1] + nv)
    sol = solve_matrix_game(_payoff(f, vertex_gains(model)))
    if sol.gap > GAP_TOL:
        raise NumericalError(f"duality gap {sol.gap} exceeds {GAP_TOL}")
    return SaddleResult(
        value=sol.value + state.offset,
        alpha_star=AdversaryControl.from_vector(sol.row),
        phi_star=ForecasterControl(sol.col),
        duality_gap=sol.gap,
    )


# --- backward induction -------------------------------------------------------------


def _require_translation(phi: FinalCondition, n: int):
    if phi.builtin:
        return {"translation": True, "homogeneity": True}
    rep = check_final_condition(phi, n)
    if not (rep.translation_ok and rep.homogeneous_ok):
        raise InvalidInputError(
            "the lattice reduction needs a final condition that is translation "
            "equivariant and positively homogeneous; the sampled audit failed "
            f"(translation_ok={rep.translation_ok}, homogeneous_ok={rep.homogeneous_ok})"
        )
    return {"translation": True, "homogeneity": True, "audited": True}


def _terminal_slice(phi: FinalCondition, n: int, r: int) -> np.ndarray:
    axes = [np.arange(-r, r + 1, dtype=float)] * (n - 1)
    grids = np.meshgrid(*axes, indexing="ij")
    x = np.stack([g.ravel() for g in grids] + [np.zeros(grids[0].size)], axis=1)
    return np.asarray(phi(x), dtype=float)


def _solve_states(F: np.ndarray, pay_gain: np.ndarray, threads: int):
    """Solve every state's matrix game; F is (rows, states)."""
    n_states = F.shape[1]
    rows, n = pay_gain.shape
    vals = np.empty(n_states)
    ctrl = np.empty((n_states, rows))
    phis = np.empty((n_states, n))
    gaps = np.empty(n_states)

    def work(lo, hi):
        for s in range(lo, hi):
            sol = solve_matrix_game(_payoff(F[:, s], pay_gain))
            vals[s], ctrl[s], phis[s], gaps[s] = sol.value, sol.row, sol.col, sol.gap

    if threads <= 1 or n_states < 256:
        work(0, n_states)
    else:
        # disjoint index ranges, no shared accumulators: output does not depend on threads
        bounds = np.linspace(0, n_states, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, bounds[:-1], bounds[1:]))
    worst = float(gaps.max()) if n_states else 0.0
    if worst > GAP_TOL:
        raise NumericalError(f"duality gap {worst} exceeds {GAP_TOL}")
    return vals, ctrl, phis, gaps


def _backward(M: int, n: int, phi: FinalCondition, gains, probs, pay_gain,
              extra: int, threads: int, full: bool, meta: dict) -> ValueTable:
    if M < 0:
        raise InvalidInputError("horizon must be nonnegative")
    if not (2 <= n <= MAX_DP_EXPERTS):
        raise CapacityError(f"exact DP supports 2..{MAX_DP_EXPERTS} experts, got {n}")
    if extra < 0:
        raise InvalidInputError("extra radius must be nonnegative")
    radius = [m + extra for m in range(M + 1)]
    biggest = (2 * radius[-1] + 1) ** (n - 1)
    if biggest > MAX_STATES_PER_SLICE:
        raise CapacityError(
            f"slice {M} would hold {biggest} states (limit {MAX_STATES_PER_SLICE}); "
            "reduce M, the extra radius or the number of experts"
        )
    meta = dict(meta, **_require_translation(phi, n))
    values: list = [None] * (M + 1)
    controls: list = [None] * (M + 1)
    phis: list = [None] * (M + 1)
    gaps: list = [None] * (M + 1)
    values[M] = _terminal_slice(phi, n, radius[M])
    rows = pay_gain.shape[0]
    controls[M] = np.full((values[M].size, rows), np.nan)
    phis[M] = np.full((values[M].size, n), np.nan)
    gaps[M] = np.zeros(values[M].size)
    for m in range(M - 1, -1, -1):
        r, rn = radius[m], radius[m + 1]
        nxt = values[m + 1].reshape((2 * rn + 1,) * (n - 1))
        F = _kahan_expect(nxt, rn, r, gains, probs).reshape(rows, -1)
        values[m], controls[m], phis[m], gaps[m] = _solve_states(F, pay_gain, threads)
    return ValueTable(M, n, phi, radius, values, controls, phis, gaps, full, meta)


def solve_value(M: int, model: ExpertModel, phi: FinalCondition, extra: int = 0,
                threads: int = 1) -> ValueTable:
    """Exact ``v(m, z)`` for the limited adversary, slices 0..M.

    ``extra`` widens every slice beyond the set reachable from the origin,
    which lets :func:`scaled_value` look up states away from 0.
    """
    gains, probs = vertex_atoms(model)
    return _backward(M, model.n_experts, phi, gains, probs, vertex_gains(model),
                     extra, threads, False, {"mu": model.mu.tolist()})


def solve_full_adversary(M: int, n_experts: int, phi: FinalCondition, extra: int = 0,
                         threads: int = 1) -> ValueTable:
    """The comparison game where the adversary picks any law on {0,1}^N."""
    gains, probs = outcome_atoms(n_experts)
    pay_gain = gains[:, 0, :].astype(float)
    return _backward(M, n_experts, phi, gains, probs, pay_gain, extra, threads, True, {})


# --- scaled value and a-priori bound ------------------------------------------------------


def _round_half_to_zero(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.ceil(np.abs(v) - 0.5)


@dataclass(frozen=True)
class ScaledLookup:
    value: float
    slice: int
    z: tuple[int, ...]
    rounding_distance: float


def scaled_lookup(table: ValueTable, t: float, x) -> ScaledLookup:
    if not (0.0 <= t <= 1.0):
        raise InvalidInputError("t must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    if x.size != table.n_experts:
        raise InvalidInputError("x has the wrong dimension")
    M = table.horizon
    rootM = math.sqrt(M) if M > 0 else 1.0
    m = min(math.ceil(M * t - 1e-12), M)
    y = rootM * x
    z = y[:-1] - y[-1]
    zr = _round_half_to_zero(z).astype(int)
    if np.any(np.abs(zr) > table.radius[m]):
        raise InvalidInputError(
            f"scaled state {zr.tolist()} outside the solved region at slice {m}; "
            "re-solve with a larger extra radius"
        )
    v = y[-1] + table.value(m, zr)
    return ScaledLookup(v / rootM, m, tuple(int(a) for a in zr), float(np.max(np.abs(z - zr), initial=0.0)))


def scaled_value(table: ValueTable, t: float, x) -> float:
    """``u^M(t, x) = V(ceil(M t), sqrt(M) x) / sqrt(M)`` with nearest-state rounding."""
    return scaled_lookup(table, t, x).value


@dataclass(frozen=True)
class AprioriReport:
    t: np.ndarray
    max_deviation: np.ndarray
    linear_fit_C: float
    monotone_in_t: bool


def check_apriori_bound(table: ValueTable, phi: FinalCondition | None = None) -> AprioriReport:
    """Per-slice max of ``|u^M - Phi|`` and the smallest C with deviation <= C (2 - t).

    Deviations are taken over the states reachable from the origin so that
    slices are comparable across horizons.
    """
    phi = phi or table.final
    M = table.horizon
    rootM = math.sqrt(M) if M > 0 else 1.0
    dev = np.zeros(M + 1)
    for m in range(M + 1):
        pts = table.states(m)
        keep = np.all(np.abs(pts) <= m, axis=1)
        pts = pts[keep]
        idx = np.ravel_multi_index(tuple((pts + table.radius[m]).T), table.shape(m))
        x = np.hstack([pts, np.zeros((pts.shape[0], 1))]).astype(float)
        dev[m] = np.max(np.abs(table.values[m][idx] - phi(x))) / rootM
    t = np.arange(M + 1) / max(M, 1)
    C = float(np.max(dev / (2.0 - t)))
    mono = bool(np.all(np.diff(dev) <= 1e-12))
    return AprioriReport(t, dev, C, mono)
