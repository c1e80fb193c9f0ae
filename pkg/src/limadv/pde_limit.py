"""The limiting value U and tools around it.

When one of the two pairwise regimes holds (all ``mu_i + mu_j <= 1`` or all
``>= 1``) the optimal balanced adversary is constant, so U is a Gaussian
expectation of the final condition:

    U(t, x) = E[ Phi(x + P W_{1-t}) ],     P^T P = c* Sigma_1 - Sigma_2.

For two experts everything reduces to the scalar ``w(tau, z)`` with
``z = x_1 - x_2`` and ``U = x_2 + w``, which has a closed form.  For more
experts we fall back to Monte Carlo with counter-based streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .balanced import BalancedAnalysis, SigmaPair, analyze_balanced
from .errors import (
    InfeasibleError, InvalidInputError, UnsupportedRegimeError,
)
from .game_core import ExpertModel, FinalCondition
from .rng import normal_blocks

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(u):
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(u))


@dataclass(frozen=True)
class GaussianLimit:
    sigma_bar: np.ndarray
    c_star: float
    regime: str
    factor: np.ndarray        # symmetric square root of sigma_bar
    theta: float
    final: FinalCondition
    mu: np.ndarray = field(repr=False)

    @property
    def n_experts(self) -> int:
        return self.sigma_bar.shape[0]

    @property
    def diff_variance(self) -> float:
        """Variance rate of ``X_1 - X_2`` (two experts only)."""
        s = self.sigma_bar
        return float(s[0, 0] + s[1, 1] - 2.0 * s[0, 1])


def classify_regime(mu: np.ndarray) -> str | None:
    n = mu.size
    iu = np.triu_indices(n, 1)
    sums = (mu[:, None] + mu[None, :])[iu]
    # both hold only when every pair sums to 1; the c*-tie rule then picks greedy
    if np.all(sums >= 1.0):
        return "greedy"
    if np.all(sums <= 1.0):
        return "generous"
    return None


def build_gaussian_limit(model: ExpertModel, analysis: BalancedAnalysis | None = None,
                         theta: float = 0.1) -> GaussianLimit:
    analysis = analysis or analyze_balanced(model)
    if not analysis.feasible:
        raise InfeasibleError("no balanced control exists, so U has no Gaussian form")
    mu = model.mu
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise InvalidInputError("accuracies must lie strictly inside (0, 1)")
    if not (0.0 <= theta < 1.0):
        raise InvalidInputError("theta must lie in [0, 1)")
    regime = classify_regime(mu)
    if regime is None:
        raise UnsupportedRegimeError(
            "pairwise sums mu_i + mu_j straddle 1; the optimal adversary is not "
            "a constant balanced control and no closed form is available"
        )
    c_star = analysis.c_min if regime == "greedy" else analysis.c_max
    sig = SigmaPair.from_model(model)
    sbar = c_star * sig.sigma1 - sig.sigma2
    sbar = 0.5 * (sbar + sbar.T)
    lam, vec = np.linalg.eigh(sbar)
    if lam[0] <= 1e-12:
        raise InvalidInputError(f"covariance is not positive definite (min eigenvalue {lam[0]})")
    P = (vec * np.sqrt(lam)) @ vec.T
    final = FinalCondition.max_theta(theta) if theta > 0 else FinalCondition.max()
    return GaussianLimit(sbar, float(c_star), regime, P, float(theta), final, mu.copy())


# --- evaluators --------------------------------------------------------------


@dataclass(frozen=True)
class MCValue:
    value: float
    stderr: float


def _check_t(t: float, allow_one: bool):
    if not (0.0 <= t <= 1.0):
        raise InvalidInputError("t must lie in [0, 1]")
    if not allow_one and t >= 1.0:
        raise InvalidInputError("derivatives of U are undefined at t = 1 (kinked final condition)")


def reduced_w(tau, z, var: float, theta: float):
    """``w`` for two experts: (1-theta) E[(z + s N)^+] + theta z / 2, s^2 = var * tau."""
    z = np.asarray(z, dtype=float)
    s = math.sqrt(var * tau)
    if s == 0.0:
        return (1.0 - theta) * np.maximum(z, 0.0) + 0.5 * theta * z
    u = z / s
    return (1.0 - theta) * (z * ndtr(u) + s * _pdf(u)) + 0.5 * theta * z


def _mc_final(gl: GaussianLimit, tau: float, x, mc_samples: int, seed: int):
    """Per-block sums of Phi(x + sqrt(tau) P xi) and of its square."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    total_sq = 0.0
    for xi in normal_blocks(seed, mc_samples, gl.n_experts):
        vals = gl.final(x + math.sqrt(tau) * xi @ gl.factor.T)
        total += float(vals.sum())
        total_sq += float(np.square(vals).sum())
    mean = total / mc_samples
    var = max(total_sq / mc_samples - mean * mean, 0.0)
    return mean, math.sqrt(var / max(mc_samples - 1, 1))


def evaluate_U(gl: GaussianLimit, t: float, x, mc_samples: int = 200_000, seed: int = 0,
               method: str = "auto") -> MCValue:
    _check_t(t, allow_one=True)
    x = np.asarray(x, dtype=float)
    if x.size != gl.n_experts:
        raise InvalidInputError("x has the wrong dimension")
    tau = 1.0 - t
    if tau == 0.0:
        return MCValue(float(gl.final(x)), 0.0)
    if method not in ("auto", "closed", "mc"):
        raise InvalidInputError(f"unknown method {method!r}")
    if gl.n_experts == 2 and method != "mc":
        w = reduced_w(tau, x[0] - x[1], gl.diff_variance, gl.theta)
        return MCValue(float(x[1] + w), 0.0)
    if method == "closed":
        raise InvalidInputError("closed form only exists for two experts")
    return MCValue(*_mc_final(gl, tau, x, mc_samples, seed))


def gradient_U(gl: GaussianLimit, t: float, x, mc_samples: int = 200_000, seed: int = 0) -> np.ndarray:
    """``(1-theta) P(coordinate i is the max) + theta/N``."""
    _check_t(t, allow_one=False)
    x = np.asarray(x, dtype=float)
    n = gl.n_experts
    tau = 1.0 - t
    th = gl.theta
    if n == 2:
        p1 = float(ndtr((x[0] - x[1]) / math.sqrt(gl.diff_variance * tau)))
        return np.array([(1 - th) * p1 + th / 2, (1 - th) * (1 - p1) + th / 2])
    counts = np.zeros(n)
    for xi in normal_blocks(seed, mc_samples, n):
        y = x + math.sqrt(tau) * xi @ gl.factor.T
        counts += np.bincount(np.argmax(y, axis=1), minlength=n)
    return (1 - th) * counts / mc_samples + th / n


def hessian_U(gl: GaussianLimit, t: float, x, mc_samples: int = 200_000, seed: int = 0) -> np.ndarray:
    """Second derivatives of U.

    For N >= 3 we differentiate the Gaussian density instead of the kinked
    payoff: ``d_j d_i U = (1-theta)/sqrt(tau) E[(1{i max} - p_i) (P^{-1} xi)_j]``.
    The estimate is symmetrized and projected so rows sum to zero.
    """
    _check_t(t, allow_one=False)
    x = np.asarray(x, dtype=float)
    n = gl.n_experts
    tau = 1.0 - t
    th = gl.theta
    if n == 2:
        s = math.sqrt(gl.diff_variance * tau)
        h = (1 - th) * float(_pdf((x[0] - x[1]) / s)) / s
        return np.array([[h, -h], [-h, h]])
    Pinv = np.linalg.inv(gl.factor)
    counts = np.zeros(n)
    cross = np.zeros((n, n))
    mean_k = np.zeros(n)
    for xi in normal_blocks(seed, mc_samples, n):
        y = x + math.sqrt(tau) * xi @ gl.factor.T
        onehot = np.eye(n)[np.argmax(y, axis=1)]
        kern = xi @ Pinv.T
        counts += onehot.sum(axis=0)
        cross += onehot.T @ kern
        mean_k += kern.sum(axis=0)
    p_hat = counts / mc_samples
    mean_k /= mc_samples
    # control variate: E[P^{-1} xi] = 0, so remove p_hat times its sample mean
    H = (1 - th) / math.sqrt(tau) * (cross / mc_samples - np.outer(p_hat, mean_k))
    H = 0.5 * (H + H.T)
    Pi = np.eye(n) - np.full((n, n), 1.0 / n)
    return Pi @ H @ Pi


# --- derivative-bound probe ---------------------------------------------------------


def _softplus_w(tau, z, var: float, nodes: int = 80):
    """E[softplus(z + sqrt(var tau) N)] by Gauss-Hermite quadrature (smooth test data)."""
    xg, wg = np.polynomial.hermite_e.hermegauss(nodes)
    wg = wg / wg.sum()
    s = math.sqrt(var * tau)
    z = np.asarray(z, dtype=float)
    return np.logaddexp(0.0, z[..., None] + s * xg) @ wg


@dataclass(frozen=True)
class DerivativeExponents:
    exponent_tt: float
    exponent_tx: float
    exponent_xxx: float
    taus: np.ndarray
    max_tt: np.ndarray
    max_tx: np.ndarray
    max_xxx: np.ndarray


def _slope(taus, vals) -> float:
    return float(np.polyfit(np.log(taus), np.log(vals), 1)[0])


def probe_derivative_bounds(gl: GaussianLimit, t_grid, x_samples: int = 64, seed: int = 0,
                            mode: str = "final") -> DerivativeExponents:
    """Fit ``log max |D U(1 - tau, .)|`` against ``log tau`` for three derivatives.

    ``t_grid`` holds times to maturity ``tau``.  Finite-difference steps scale
    with ``tau`` (time) and ``sqrt(tau)`` (space).  ``mode="smooth"`` swaps in
    a softplus final condition whose derivatives stay bounded, as a control.
    """
    if gl.n_experts != 2:
        raise UnsupportedRegimeError("the probe uses the two-expert closed form")
    taus = np.asarray(sorted(t_grid), dtype=float)
    if taus.size < 4 or np.any(taus <= 0) or np.any(taus >= 1) or taus[-1] / taus[0] < 10:
        raise InvalidInputError("need >= 4 points in (0, 1) spanning at least a decade")
    var = gl.diff_variance
    if mode == "final":
        w = lambda tau, z: reduced_w(tau, z, var, gl.theta)  # noqa: E731
    elif mode == "smooth":
        w = lambda tau, z: _softplus_w(tau, z, var)  # noqa: E731
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    mtt, mtx, mxxx = [], [], []
    for tau in taus:
        s = math.sqrt(var * tau)
        # kinked data concentrates its derivatives within ~s of the kink
        width = s if mode == "final" else 1.0
        z = np.concatenate([[0.0], width * rng.uniform(-3.0, 3.0, x_samples - 1)])
        h = 0.05 * tau
        k = 0.05 * width
        d_tt = (w(tau + h, z) - 2 * w(tau, z) + w(tau - h, z)) / h**2
        # d/dx_1 of U equals d/dz of w; d/dt = -d/dtau
        d_tx = -(w(tau + h, z + k) - w(tau + h, z - k) - w(tau - h, z + k) + w(tau - h, z - k)) / (4 * h * k)
        d_xxx = (w(tau, z + 2 * k) - 2 * w(tau, z + k) + 2 * w(tau, z - k) - w(tau, z - 2 * k)) / (2 * k**3)
        mtt.append(np.max(np.abs(d_tt)))
        mtx.append(np.max(np.abs(d_tx)))
        mxxx.append(np.max(np.abs(d_xxx)))
    mtt, mtx, mxxx = map(np.asarray, (mtt, mtx, mxxx))
    return DerivativeExponents(_slope(taus, mtt), _slope(taus, mtx), _slope(taus, mxxx),
                               taus, mtt, mtx, mxxx)


# --- reduced finite differences ------------------------------------------------------


@dataclass(frozen=True)
class Grid1DSpec:
    z_min: float = -6.0
    z_max: float = 6.0
    nz: int = 801
    nt: int = 4000


@dataclass(frozen=True)
class Grid1D:
    """``values[k]`` is ``w(t_k, .)`` on ``z``, with ``t_k = k / nt`` (nt + 1 rows)."""

    z_min: float
    z_max: float
    nz: int
    nt: int
    z: np.ndarray
    t: np.ndarray
    values: np.ndarray
    c_choice: np.ndarray      # chosen balance level at t = 0 per node

    def at(self, t_index: int, z: float) -> float:
        return float(np.interp(z, self.z, self.values[t_index]))


def solve_reduced_fd(model: ExpertModel, analysis: BalancedAnalysis | None = None,
                     theta: float = 0.0, grid: Grid1DSpec = Grid1DSpec(),
                     terminal=None) -> Grid1D:
    """Explicit Euler for ``w_t + max_c [c (1 - mu_1 - mu_2) + mu_1 mu_2] w_zz = 0``.

    The max over the balance level is taken node by node between ``c_min``
    and ``c_max``.  Boundary values are frozen at the terminal data, which is
    exact for affine tails.
    """
    if model.n_experts != 2:
        raise InvalidInputError("the reduced scheme is for two experts")
    analysis = analysis or analyze_balanced(model)
    if not analysis.feasible:
        raise InfeasibleError("no balanced control exists")
    if grid.nz < 3 or grid.nt < 1 or grid.z_max <= grid.z_min:
        raise InvalidInputError("degenerate grid")
    mu1, mu2 = model.mu
    k1 = 1.0 - mu1 - mu2
    coeffs = np.array([analysis.c_min * k1 + mu1 * mu2, analysis.c_max * k1 + mu1 * mu2])
    levels = np.array([analysis.c_min, analysis.c_max])
    z = np.linspace(grid.z_min, grid.z_max, grid.nz)
    dz = z[1] - z[0]
    dt = 1.0 / grid.nt
    a_max = float(coeffs.max())
    if dt * a_max / dz**2 > 0.5:
        need = math.ceil(2.0 * a_max / dz**2)
        raise InvalidInputError(f"CFL violated: dt*a/dz^2 = {dt * a_max / dz**2:.3g} > 1/2; use nt >= {need}")
    if terminal is None:
        w = (1.0 - theta) * np.maximum(z, 0.0) + 0.5 * theta * z
    else:
        w = np.asarray(terminal(z), dtype=float)
    out = np.empty((grid.nt + 1, grid.nz))
    out[-1] = w
    choice = np.zeros(grid.nz, dtype=int)
    lam = dt / dz**2
    for k in range(grid.nt - 1, -1, -1):
        d2 = np.zeros_like(w)
        d2[1:-1] = w[2:] - 2.0 * w[1:-1] + w[:-2]
        # greedy (index 0) unless generous is strictly better, matching the c*-tie rule
        choice = np.where(coeffs[1] * d2 > coeffs[0] * d2, 1, 0)
        w = w + lam * coeffs[choice] * d2
        out[k] = w
    return Grid1D(grid.z_min, grid.z_max, grid.nz, grid.nt, z, np.arange(grid.nt + 1) / grid.nt,
                  out, levels[choice])


# --- closed-form constants ----------------------------------------------------------------


def symmetric_heat_constant(mu_bar: float, n_experts: int) -> float:
    if not (0.0 < mu_bar < 1.0):
        raise InvalidInputError("mu_bar must lie in (0, 1)")
    if n_experts < 2:
        raise InvalidInputError("need at least two experts")
    m, n = mu_bar, n_experts
    if m <= 0.5:
        return 0.5 * (1 - 2 * m) * (m + (1 - m) / n) + 0.5 * m * m
    return 0.5 * (1 - 2 * m) * (m - m / n) + 0.5 * m * m


@dataclass(frozen=True)
class PairBound:
    pair: tuple[int, int]
    c: float
    diff_variance: float
    value: float


def _pair_bound(model: ExpertModel, pair, t: float, x) -> PairBound:
    i, j = pair
    n = model.n_experts
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise InvalidInputError(f"bad pair {pair}")
    _check_t(t, allow_one=True)
    x = np.asarray(x, dtype=float)
    mi, mj = model.mu[i], model.mu[j]
    sub = analyze_balanced(ExpertModel([mi, mj]))
    others = [model.mu[k] for k in range(n) if k not in (i, j)]
    # experts outside the pair must not out-earn it, else following them beats the pair
    lo = max([sub.c_min] + others)
    hi = sub.c_max
    if lo > hi + 1e-12:
        raise InfeasibleError(f"pair {pair} cannot be balanced above the other experts")
    k1 = 1.0 - mi - mj
    c = hi if k1 > 0 else lo
    var = 2.0 * (c * k1 + mi * mj)
    val = float(x[j] + reduced_w(1.0 - t, x[i] - x[j], var, 0.0))
    return PairBound((i, j), float(c), float(var), val)


def two_expert_lower_bound(model: ExpertModel, pair, t: float = 0.0, x=None) -> float:
    """Limit value of the sub-game where only experts ``pair`` (0-based) are corrupted.

    The adversary balances the pair at the level maximizing the diffusion,
    restricted to levels no lower than every other expert's accuracy.
    """
    if x is None:
        x = np.zeros(model.n_experts)
    return _pair_bound(model, pair, t, x).value


def best_pair_lower_bound(model: ExpertModel, t: float = 0.0, x=None) -> PairBound:
    if x is None:
        x = np.zeros(model.n_experts)
    best = None
    n = model.n_experts
    for i in range(n):
        for j in range(i + 1, n):
            try:
                b = _pair_bound(model, (i, j), t, x)
            except InfeasibleError:
                continue
            if best is None or b.value > best.value:
                best = b
    if best is None:
        raise InfeasibleError("no admissible pair")
    return best
