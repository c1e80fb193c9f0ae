"""Player policies and a vectorized Monte Carlo engine for the repeated game.

Replications are processed in fixed-size blocks.  Each block owns a Philox
stream keyed by ``(seed, block index)`` and draws its randomness in a fixed
order, so results are identical for any number of worker threads.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .balanced import BalancedAnalysis, SigmaPair, analyze_balanced, construct_balanced
from .errors import InvalidInputError
from .game_core import (
    AdversaryControl, ExpertModel, FinalCondition, ForecasterControl, vertex_gains,
)
from .lp import solve_matrix_game
from .minimax_dp import ValueTable
from .pde_limit import GaussianLimit, gradient_U, hessian_U
from .rng import stream

SIM_BLOCK = 8192
SIM_TOL = 1e-9          # looser than the type tolerance: policies emit computed floats
Z975 = float(norm.ppf(0.975))


# --- single-state steps -----------------------------------------------------------


def adversary_hat(model: ExpertModel) -> AdversaryControl:
    """Corrupt expert 1 upward or expert 2 downward, each with probability 1/2."""
    if model.n_experts != 2:
        raise InvalidInputError("the hat strategy is defined for two experts")
    return AdversaryControl(a=[0.0, 0.5], b=[0.5, 0.0])


def _time(m: int, M: int) -> float:
    return (m - 1) / M


def adversary_asymptotic_step(gl: GaussianLimit, analysis: BalancedAnalysis, m: int, M: int,
                              x, model: ExpertModel | None = None,
                              mc_samples: int = 20_000, seed: int = 0) -> AdversaryControl:
    """Balanced control at the level favoured by the Hessian of U at ``(t_{m-1}, x / sqrt(M))``."""
    if not analysis.feasible:
        raise InvalidInputError("the asymptotic adversary needs a balanced control")
    model = model or ExpertModel(gl.mu)
    t = _time(m, M)
    if t >= 1.0:
        return construct_balanced(analysis.c_min, model)
    S = hessian_U(gl, t, np.asarray(x, dtype=float) / math.sqrt(M), mc_samples, seed)
    tr = float(np.sum(SigmaPair.from_model(model).sigma1 * S))
    return construct_balanced(analysis.c_max if tr > 0 else analysis.c_min, model)


def forecaster_gradient_step(gl: GaussianLimit, m: int, M: int, x,
                             mc_samples: int = 20_000, seed: int = 0) -> ForecasterControl:
    x = np.asarray(x, dtype=float)
    t = _time(m, M)
    if t >= 1.0:
        top = np.isclose(x, x.max(), rtol=0, atol=1e-12)
        return ForecasterControl(top / top.sum())
    g = gradient_U(gl, t, x / math.sqrt(M), mc_samples, seed)
    return ForecasterControl(g / g.sum())


def pair_balanced_control(model: ExpertModel, pair, c: float) -> AdversaryControl:
    """Balance only experts ``pair`` at level ``c``; the rest are never corrupted."""
    i, j = pair
    sub = ExpertModel([model.mu[i], model.mu[j]])
    small = construct_balanced(c, sub).as_vector()
    n = model.n_experts
    v = np.zeros(2 * n)
    v[[i, j]] = small[:2]
    v[[n + i, n + j]] = small[2:]
    return AdversaryControl.from_vector(v)


def myopic_saddle(model: ExpertModel, phi: FinalCondition, top_mask) -> tuple[np.ndarray, np.ndarray]:
    """One-round saddle of ``E[Phi(X + dG)] - E[dG_F]`` for integer states.

    With integer X and gains in {0,1}, ``max(X + g) - max X`` is 1 exactly
    when some currently-top expert gains, so only the top set matters.
    Returns (adversary 2N-vector, forecaster N-vector).
    """
    n = model.n_experts
    top = np.asarray(top_mask, dtype=bool)
    if phi.kind == "custom":
        raise InvalidInputError("myopic saddle supports the built-in final conditions")
    th = phi.effective_theta
    mu = model.mu
    C = vertex_gains(model)
    f = np.empty(2 * n)
    outs = np.array(list(itertools.product((0, 1), repeat=n)), dtype=bool)
    for k in range(2 * n):
        j, v = k % n, k // n
        lik = np.where(outs, mu, 1.0 - mu)
        lik[:, j] = outs[:, j] == bool(v)
        p = np.prod(lik, axis=1)
        hit = np.any(outs & top, axis=1)
        f[k] = (1 - th) * float(p @ hit) + th * C[k].mean()
    sol = solve_matrix_game(f[:, None] - C)
    return sol.row, sol.col


# --- policies ----------------------------------------------------------------


@dataclass(frozen=True)
class AdversaryPolicy:
    """Vectorized adversary: ``controls(m, M, X)`` maps (R, N) states to (R, 2N) laws."""

    kind: str
    model: ExpertModel
    control: np.ndarray | None = None
    gl: GaussianLimit | None = None
    analysis: BalancedAnalysis | None = None
    table: ValueTable | None = None
    fn: Callable | None = None
    cache: dict = field(default_factory=dict, compare=False, repr=False)
    heuristic: bool = False

    @classmethod
    def constant(cls, alpha: AdversaryControl, model: ExpertModel) -> "AdversaryPolicy":
        return cls("constant", model, control=alpha.as_vector())

    @classmethod
    def hat(cls, model: ExpertModel) -> "AdversaryPolicy":
        return cls("hat", model, control=adversary_hat(model).as_vector())

    @classmethod
    def asymptotic_star(cls, gl: GaussianLimit, model: ExpertModel,
                        analysis: BalancedAnalysis | None = None) -> "AdversaryPolicy":
        analysis = analysis or analyze_balanced(model)
        cache = {
            "min": construct_balanced(analysis.c_min, model).as_vector(),
            "max": construct_balanced(analysis.c_max, model).as_vector(),
            "tr": SigmaPair.from_model(model).sigma1,
        }
        return cls("asymptotic_star", model, gl=gl, analysis=analysis, cache=cache)

    @classmethod
    def saddle(cls, model: ExpertModel, phi: FinalCondition) -> "AdversaryPolicy":
        n = model.n_experts
        table = np.zeros((1 << n, 2 * n))
        fore = np.zeros((1 << n, n))
        for code in range(1, 1 << n):
            mask = [(code >> i) & 1 for i in range(n)]
            table[code], fore[code] = myopic_saddle(model, phi, mask)
        return cls("saddle", model, cache={"alpha": table, "phi": fore})

    @classmethod
    def dp(cls, table: ValueTable, model: ExpertModel) -> "AdversaryPolicy":
        if table.full_adversary:
            raise InvalidInputError("replay needs a limited-adversary table")
        return cls("dp", model, table=table)

    @classmethod
    def custom(cls, fn: Callable, model: ExpertModel) -> "AdversaryPolicy":
        return cls("custom", model, fn=fn)

    def controls(self, m: int, M: int, X: np.ndarray) -> np.ndarray:
        R, n = X.shape
        if self.kind in ("constant", "hat"):
            return np.broadcast_to(self.control, (R, 2 * n))
        if self.kind == "saddle":
            return self.cache["alpha"][_top_codes(X)]
        if self.kind == "dp":
            return _dp_lookup(self.table, self.table.controls, m, X)
        if self.kind == "custom":
            return np.asarray(self.fn(m, M, X), dtype=float)
        if self.kind == "asymptotic_star":
            t = _time(m, M)
            if t >= 1.0:
                return np.broadcast_to(self.cache["min"], (R, 2 * n))
            tr = self._trace_sign(t, X / math.sqrt(M))
            return np.where(tr[:, None] > 0, self.cache["max"], self.cache["min"])
        raise InvalidInputError(f"unknown adversary kind {self.kind!r}")

    def _trace_sign(self, t: float, x: np.ndarray) -> np.ndarray:
        gl = self.gl
        if gl.n_experts == 2:
            # Hessian is h [[1,-1],[-1,1]] with h > 0
            s1 = self.cache["tr"]
            return np.full(x.shape[0], s1[0, 0] + s1[1, 1] - 2 * s1[0, 1])
        S1 = self.cache["tr"]
        out = np.empty(x.shape[0])
        for r in range(x.shape[0]):
            out[r] = np.sum(S1 * hessian_U(gl, t, x[r], 4096, seed=r))
        return out


@dataclass(frozen=True)
class ForecasterPolicy:
    """Vectorized forecaster: ``controls(m, M, X, alpha)`` returns (R, N) laws."""

    kind: str
    gl: GaussianLimit | None = None
    eta: float | None = None
    table: ValueTable | None = None
    fn: Callable | None = None
    model: ExpertModel | None = None
    mc_samples: int = 2048

    @classmethod
    def gradient(cls, gl: GaussianLimit, mc_samples: int = 2048) -> "ForecasterPolicy":
        return cls("gradient_U", gl=gl, mc_samples=mc_samples)

    @classmethod
    def follow_the_leader(cls) -> "ForecasterPolicy":
        return cls("follow_the_leader")

    @classmethod
    def multiplicative_weights(cls, eta: float | None = None) -> "ForecasterPolicy":
        return cls("multiplicative_weights", eta=eta)

    @classmethod
    def best_response(cls, model: ExpertModel) -> "ForecasterPolicy":
        return cls("best_response", model=model)

    @classmethod
    def uniform(cls) -> "ForecasterPolicy":
        return cls("uniform")

    @classmethod
    def dp(cls, table: ValueTable) -> "ForecasterPolicy":
        return cls("dp", table=table)

    @classmethod
    def custom(cls, fn: Callable) -> "ForecasterPolicy":
        return cls("custom", fn=fn)

    def controls(self, m: int, M: int, X: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        R, n = X.shape
        k = self.kind
        if k == "uniform":
            return np.full((R, n), 1.0 / n)
        if k == "follow_the_leader":
            return _uniform_argmax(X)
        if k == "multiplicative_weights":
            eta = self.eta if self.eta is not None else math.sqrt(8.0 * math.log(n) / max(M, 1))
            w = np.exp(eta * (X - X.max(axis=1, keepdims=True)))
            return w / w.sum(axis=1, keepdims=True)
        if k == "best_response":
            c = alpha @ vertex_gains(self.model)
            return _uniform_argmax(c)
        if k == "dp":
            return _dp_lookup(self.table, self.table.phis, m, X)
        if k == "custom":
            return np.asarray(self.fn(m, M, X, alpha), dtype=float)
        if k == "gradient_U":
            return self._gradient(m, M, X)
        raise InvalidInputError(f"unknown forecaster kind {k!r}")

    def _gradient(self, m: int, M: int, X: np.ndarray) -> np.ndarray:
        gl = self.gl
        t = _time(m, M)
        if t >= 1.0:
            return _uniform_argmax(X)
        x = X / math.sqrt(M)
        tau = 1.0 - t
        th = gl.theta
        n = gl.n_experts
        if n == 2:
            p1 = ndtr((x[:, 0] - x[:, 1]) / math.sqrt(gl.diff_variance * tau))
            return np.stack([(1 - th) * p1 + th / 2, (1 - th) * (1 - p1) + th / 2], axis=1)
        # shared draws across replications: a deterministic quadrature of the max law
        xi = stream(0, 7, m).standard_normal((self.mc_samples, n)) @ gl.factor.T
        out = np.empty_like(x)
        for lo in range(0, x.shape[0], 256):
            y = x[lo:lo + 256, None, :] + math.sqrt(tau) * xi[None]
            win = np.argmax(y, axis=2)
            out[lo:lo + 256] = np.stack([(win == i).mean(axis=1) for i in range(n)], axis=1)
        return (1 - th) * out + th / n


def _uniform_argmax(v: np.ndarray) -> np.ndarray:
    top = v >= v.max(axis=1, keepdims=True) - 1e-12
    return top / top.sum(axis=1, keepdims=True)


def _top_codes(X: np.ndarray) -> np.ndarray:
    top = X >= X.max(axis=1, keepdims=True) - 0.5
    return top.astype(np.int64) @ (1 << np.arange(X.shape[1], dtype=np.int64))


def _dp_lookup(table: ValueTable, arrays, m: int, X: np.ndarray) -> np.ndarray:
    z = np.rint(X[:, :-1] - X[:, -1:]).astype(int)
    r = table.radius[m - 1]
    if np.any(np.abs(z) > r):
        raise InvalidInputError("state left the solved table")
    idx = np.ravel_multi_index(tuple((z + r).T), table.shape(m - 1))
    return arrays[m - 1][idx]


# --- engine ------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationReport:
    M: int
    replications: int
    mean: float
    variance: float
    ci95_low: float
    ci95_high: float
    terminal: np.ndarray = field(repr=False)
    aborted: int = 0
    diagnostics: tuple = ()
    z_step_mean: float | None = None
    z_step_var: float | None = None
    z_step_m4: float | None = None       # fourth central moment of the step
    z_step_count: int = 0
    z_path_mean: np.ndarray | None = field(default=None, repr=False)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.replications) if self.replications > 1 else float("nan")

    def summary(self) -> dict:
        out = {
            "M": self.M, "replications": self.replications, "mean": self.mean,
            "variance": self.variance, "stderr": self.stderr,
            "ci95_low": self.ci95_low, "ci95_high": self.ci95_high, "aborted": self.aborted,
        }
        if self.z_step_count:
            out.update(z_step_mean=self.z_step_mean, z_step_var=self.z_step_var,
                       z_step_count=self.z_step_count)
        return out


def _validate_rows(P: np.ndarray, width: int) -> np.ndarray:
    if P.ndim != 2 or P.shape[1] != width:
        return np.zeros(P.shape[0] if P.ndim else 0, dtype=bool)
    # NaN fails every comparison, so no separate finiteness pass is needed
    return ((P.min(axis=1) >= -SIM_TOL) & (P.max(axis=1) <= 1 + SIM_TOL)
            & (np.abs(P.sum(axis=1) - 1.0) <= SIM_TOL))


def _categorical(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; rows of P must already sum to one."""
    if P.shape[1] == 2:
        return (u >= P[:, 0]).astype(np.int64)
    cum = np.cumsum(P[:, :-1], axis=1)
    return (u[:, None] >= cum).sum(axis=1)


def _run_block(model, adv, fore, phi, M, R, seed, b, x0, track):
    n = model.n_experts
    mu = model.mu
    rng = stream(seed, 1, b)
    X = np.tile(x0, (R, 1))
    alive = np.ones(R, dtype=bool)
    diag = []
    zmom = np.zeros(4)
    zpath = np.zeros(M + 1) if track else None
    if track:
        zpath[0] = float(np.sum(X[:, 0] - X[:, 1]))
    rows = np.arange(R)
    fixed = adv.kind in ("constant", "hat")
    if fixed:
        a0 = np.asarray(adv.control, dtype=float)
        if not _validate_rows(a0[None], 2 * n)[0]:
            raise InvalidInputError("constant adversary control is not a probability vector")
        A_fixed = np.broadcast_to(np.clip(a0, 0, None) / np.clip(a0, 0, None).sum(), (R, 2 * n))
    for m in range(1, M + 1):
        if fixed:
            A = A_fixed
            okA = np.ones(R, dtype=bool)
        else:
            A = np.array(adv.controls(m, M, X), dtype=float)
            if A.shape != (R, 2 * n):
                raise InvalidInputError(f"adversary returned shape {A.shape}, expected {(R, 2 * n)}")
            okA = _validate_rows(A, 2 * n)
        F = np.array(fore.controls(m, M, X, np.where(okA[:, None], A, 0.0) if not fixed else A),
                     dtype=float)
        if F.shape != (R, n):
            raise InvalidInputError(f"forecaster returned shape {F.shape}, expected {(R, n)}")
        okF = _validate_rows(F, n)
        bad = alive & ~(okA & okF)
        if bad.any():
            who = "adversary" if not okA[bad].all() else "forecaster"
            diag.append(f"round {m}: {int(bad.sum())} replication(s) aborted, invalid {who} control")
            alive &= ~bad
        if not alive.all():
            # aborted rows keep being simulated on dummy controls and are dropped at the end
            dead = ~alive[:, None]
            if not fixed:
                A = np.where(dead, 1.0 / (2 * n), A)
            F = np.where(dead, 1.0 / n, F)
        u = rng.random((R, n + 2))
        g = (u[:, :n] < mu).astype(np.int64)
        k = _categorical(A, u[:, n])
        g[rows, k % n] = k // n
        f = _categorical(F, u[:, n + 1])
        dX = g - g[rows, f][:, None]
        X += dX
        if track:
            dz = (dX[:, 0] - dX[:, 1])[alive]
            zmom += [float(np.sum(dz**q)) for q in (1, 2, 3, 4)]
            zpath[m] = float(np.sum((X[:, 0] - X[:, 1])[alive]))
    term = np.asarray(phi(X), dtype=float)
    term[~alive] = np.nan
    return term, diag, zmom, zpath


def simulate(model: ExpertModel, adv: AdversaryPolicy, fore: ForecasterPolicy,
             phi: FinalCondition, M: int, replications: int, seed: int = 0,
             threads: int = 1, x0=None, track_z: bool = False,
             block: int = SIM_BLOCK) -> SimulationReport:
    if replications < 1:
        raise InvalidInputError("replications must be positive")
    if M < 0:
        raise InvalidInputError("M must be nonnegative")
    n = model.n_experts
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if track_z and n < 2:
        raise InvalidInputError("track_z needs two experts")
    sizes = [min(block, replications - lo) for lo in range(0, replications, block)]

    def job(b):
        return _run_block(model, adv, fore, phi, M, sizes[b], seed, b, x0, track_z)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]

    term = np.concatenate([p[0] for p in parts])
    diag = tuple(d for p in parts for d in p[1])
    ok = ~np.isnan(term)
    vals = term[ok]
    R = int(vals.size)
    if R == 0:
        raise InvalidInputError("every replication aborted: " + "; ".join(diag[:3]))
    mean = float(np.mean(vals))
    var = float(np.var(vals, ddof=1)) if R > 1 else 0.0
    half = Z975 * math.sqrt(var / R) if R > 1 else float("nan")
    z_mean = z_var = z_m4 = None
    zc = 0
    zpath = None
    if track_z:
        zc = R * M
        if zc:
            s1, s2, s3, s4 = sum(p[2] for p in parts) / zc
            z_mean = s1
            z_var = (s2 - s1 * s1) * zc / max(zc - 1, 1)
            z_m4 = s4 - 4 * s1 * s3 + 6 * s1 * s1 * s2 - 3 * s1**4
        zpath = sum(p[3] for p in parts) / R
    return SimulationReport(M, R, mean, var, mean - half, mean + half, term,
                            int((~ok).sum()), diag, z_mean, z_var, z_m4, zc, zpath)
