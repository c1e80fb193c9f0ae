"""Domain types for the limited-adversary expert game.

Each round every expert i is correct with probability ``mu[i]``.  The
adversary picks a joint law over (expert to corrupt, pinned gain) and the
forecaster picks a law over experts.  Controls are stored as plain numpy
vectors; the adversary's 2N-vector is laid out as ``[a_1..a_N, b_1..b_N]``
where ``a`` pins the gain to 0 and ``b`` pins it to 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import CapacityError, InvalidInputError

PROB_TOL = 1e-12
MAX_ENUM_EXPERTS = 20


def _as_simplex(v, name: str, tol: float = PROB_TOL) -> np.ndarray:
    v = np.asarray(v, dtype=float).copy()
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be a vector")
    if np.any(~np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if np.any(v < -tol) or np.any(v > 1 + tol):
        raise InvalidInputError(f"{name} has entries outside [0, 1]")
    total = v.sum()
    if abs(total - 1.0) > tol:
        raise InvalidInputError(f"{name} sums to {total!r}, not 1")
    v = np.clip(v, 0.0, 1.0)
    v /= v.sum()
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class ExpertModel:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).copy()
        if mu.ndim != 1 or mu.size < 2:
            raise InvalidInputError("need a vector of at least two accuracies")
        if np.any(~np.isfinite(mu)) or np.any(mu < 0) or np.any(mu > 1):
            raise InvalidInputError("accuracies must lie in [0, 1]")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def n_experts(self) -> int:
        return self.mu.size

    def __repr__(self):
        return f"ExpertModel(mu={self.mu.tolist()})"


@dataclass(frozen=True)
class AdversaryControl:
    """Joint corruption law: ``a[i] = P(corrupt i, gain 0)``, ``b[i] = P(corrupt i, gain 1)``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise InvalidInputError("a and b must be vectors of equal length")
        v = _as_simplex(np.concatenate([a, b]), "adversary control")
        n = a.size
        object.__setattr__(self, "a", v[:n])
        object.__setattr__(self, "b", v[n:])

    @classmethod
    def from_vector(cls, v) -> "AdversaryControl":
        v = np.asarray(v, dtype=float)
        if v.size % 2:
            raise InvalidInputError("adversary vector must have even length")
        n = v.size // 2
        return cls(v[:n], v[n:])

    @classmethod
    def pure(cls, n: int, expert: int, value: int) -> "AdversaryControl":
        v = np.zeros(2 * n)
        v[expert + n * int(value)] = 1.0
        return cls.from_vector(v)

    @property
    def n_experts(self) -> int:
        return self.a.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def __repr__(self):
        return f"AdversaryControl(a={self.a.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True)
class ForecasterControl:
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _as_simplex(self.phi, "forecaster control"))

    @property
    def n_experts(self) -> int:
        return self.phi.size


@dataclass(frozen=True)
class GainDistribution:
    """Law of the realized gain vector; ``gains`` is (K, N) in {0,1}."""

    gains: np.ndarray
    probs: np.ndarray
    mean: np.ndarray = field(init=False)
    second_moment: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.gains.astype(float)
        object.__setattr__(self, "mean", self.probs @ g)
        object.__setattr__(self, "second_moment", (g * self.probs[:, None]).T @ g)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.probs @ f(self.gains))


def _check_dims(alpha: AdversaryControl, model: ExpertModel):
    if alpha.n_experts != model.n_experts:
        raise InvalidInputError(
            f"control has {alpha.n_experts} experts, model has {model.n_experts}"
        )


def expected_gain(alpha: AdversaryControl, model: ExpertModel) -> np.ndarray:
    _check_dims(alpha, model)
    return (1.0 - alpha.a - alpha.b) * model.mu + alpha.b


def vertex_gains(model: ExpertModel) -> np.ndarray:
    """Expected gains under each of the 2N pure corruptions, shape (2N, N).

    Row ``k < N`` corrupts expert k to 0, row ``N + k`` corrupts it to 1.
    Expected gains are linear on the simplex, so ``alpha_vec @ vertex_gains``
    equals :func:`expected_gain`.
    """
    n = model.n_experts
    c = np.tile(model.mu, (2 * n, 1))
    idx = np.arange(n)
    c[idx, idx] = 0.0
    c[n + idx, idx] = 1.0
    return c


def _all_outcomes(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8)


def gain_distribution(alpha: AdversaryControl, model: ExpertModel) -> GainDistribution:
    _check_dims(alpha, model)
    n = model.n_experts
    if n > MAX_ENUM_EXPERTS:
        raise CapacityError(
            f"{n} experts needs 2^{n} atoms; use the Monte Carlo simulator instead"
        )
    out = _all_outcomes(n)
    mu = model.mu
    # per-coordinate Bernoulli likelihoods, (2^N, N)
    lik = np.where(out == 1, mu, 1.0 - mu)
    probs = np.zeros(out.shape[0])
    for j in range(n):
        others = np.prod(np.delete(lik, j, axis=1), axis=1)
        for value, w in ((0, alpha.a[j]), (1, alpha.b[j])):
            if w > 0:
                probs += w * others * (out[:, j] == value)
    keep = probs > 0
    return GainDistribution(out[keep], probs[keep])


# --- final conditions -------------------------------------------------------


@dataclass(frozen=True)
class FinalCondition:
    kind: str
    theta: float = 0.0
    evaluator: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("max", "max_theta", "custom"):
            raise InvalidInputError(f"unknown final condition kind {self.kind!r}")
        if self.kind == "max_theta" and not (0.0 <= self.theta < 1.0):
            raise InvalidInputError("theta must lie in [0, 1)")
        if self.kind == "custom" and self.evaluator is None:
            raise InvalidInputError("custom final condition needs an evaluator")

    @classmethod
    def max(cls) -> "FinalCondition":
        return cls("max")

    @classmethod
    def max_theta(cls, theta: float) -> "FinalCondition":
        return cls("max_theta", float(theta))

    @classmethod
    def custom(cls, fn) -> "FinalCondition":
        return cls("custom", 0.0, fn)

    @property
    def builtin(self) -> bool:
        return self.kind != "custom"

    @property
    def effective_theta(self) -> float:
        return self.theta if self.kind == "max_theta" else 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.evaluator(x), dtype=float)
        m = x.max(axis=-1)
        if self.kind == "max":
            return m
        return (1.0 - self.theta) * m + self.theta * x.mean(axis=-1)


@dataclass(frozen=True)
class FinalConditionReport:
    lipschitz_est: float
    monotone_ok: bool
    homogeneous_ok: bool
    translation_ok: bool
    theta_lower_bound_est: float


def check_final_condition(
    phi: FinalCondition, n_experts: int, sample_count: int = 2000,
    radius: float = 5.0, seed: int = 0,
) -> FinalConditionReport:
    """Empirical audit of monotonicity, homogeneity, translation and strict monotonicity.

    Increments ``y`` are drawn sparse (each coordinate zeroed with probability
    1/2) so that directions which leave the maximum untouched are exercised.
    """
    if sample_count < 1:
        raise InvalidInputError("sample_count must be positive")
    rng = np.random.default_rng(seed)
    n = n_experts
    x = rng.uniform(-radius, radius, size=(sample_count, n))
    y = rng.uniform(0.0, radius, size=(sample_count, n))
    y *= rng.random((sample_count, n)) < 0.5
    lam = rng.uniform(0.1, 3.0, size=sample_count)
    shift = rng.uniform(-radius, radius, size=sample_count)

    fx = phi(x)
    fxy = phi(x + y)
    dphi = fxy - fx
    ynorm = np.abs(y).max(axis=1)
    moved = ynorm > 0
    lip = float(np.max(np.abs(dphi[moved]) / ynorm[moved])) if moved.any() else 0.0
    scale = 1e-9 * (1.0 + np.abs(fx))
    monotone = bool(np.all(dphi >= -scale))
    homog = bool(np.allclose(phi(lam[:, None] * x), lam * fx, rtol=1e-9, atol=1e-9))
    trans = bool(np.allclose(phi(x + shift[:, None]), fx + shift, rtol=1e-9, atol=1e-9))
    ysum = y.sum(axis=1)
    ok = ysum > 1e-9
    theta_hat = float(np.min(n * dphi[ok] / ysum[ok])) if ok.any() else float("nan")
    return FinalConditionReport(lip, monotone, homog, trans, theta_hat)
