"""Missingness mechanisms and their mask statistics.

``P[i, j] = 1`` means entry ``j`` of row ``i`` is observed.  Four laws are
supported: homogeneous Bernoulli (Ho-MCAR), block-correlated MCAR, sampling
``k`` missing coordinates without replacement, and logistic self-masking
(MNAR).  For the MCAR laws the observation rates ``rho``, the mask covariance
``V`` and the normalized matrix ``C_kj = V_kj / (rho_k rho_j)`` are available
in closed form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import optimize, special

if TYPE_CHECKING:
    from zeroimp.model import LinearProblem

MASK_KINDS = ("ho_mcar", "block_mcar", "without_replacement", "self_masking")
MCAR_KINDS = ("ho_mcar", "block_mcar", "without_replacement")


@dataclass(frozen=True, eq=False)
class MaskModel:
    """Law of the observation pattern ``P`` in ``{0, 1}^d``.

    Use the classmethod constructors; fields not relevant to ``kind`` are
    left at ``None``.  For ``block_mcar`` the coordinates are split into
    consecutive blocks of size ``k``; each block independently draws one row
    of ``block_patterns`` with probabilities ``block_probs``.
    """

    kind: str
    dim: int
    rho: float | None = None
    k: int | None = None
    block_patterns: np.ndarray | None = None
    block_probs: np.ndarray | None = None
    alpha: np.ndarray | None = None
    intercept: np.ndarray | None = None
    target_rate: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def ho_mcar(cls, d: int, rho: float) -> MaskModel:
        if not 0 < rho <= 1:
            # always-missing variables are discarded upstream
            raise ValueError(f"rho must lie in (0, 1], got {rho}")
        return cls("ho_mcar", d, rho=float(rho))

    @classmethod
    def without_replacement(cls, d: int, k: int) -> MaskModel:
        if not 0 <= k <= d - 1:
            raise ValueError(f"need 0 <= k <= d - 1 missing components, got k={k}, d={d}")
        return cls("without_replacement", d, k=int(k))

    @classmethod
    def block_mcar(
        cls,
        d: int,
        k: int,
        rho: float = 0.5,
        patterns: np.ndarray | None = None,
        probs: np.ndarray | None = None,
    ) -> MaskModel:
        """Independent blocks of size ``k`` with a shared within-block law.

        Default law: the whole block is observed with probability ``rho`` and
        missing otherwise.
        """
        if k < 1 or d % k:
            raise ValueError(f"block size {k} must divide d={d}")
        if patterns is None:
            if not 0 < rho <= 1:
                raise ValueError(f"rho must lie in (0, 1], got {rho}")
            patterns = np.array([np.ones(k), np.zeros(k)])
            probs = np.array([rho, 1.0 - rho])
        patterns = np.asarray(patterns, dtype=np.int8).reshape(-1, k)
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (patterns.shape[0],) or np.any(probs < 0):
            raise ValueError("block law needs one non-negative probability per pattern")
        if not np.isclose(probs.sum(), 1.0, atol=1e-12):
            raise ValueError("block law probabilities must sum to 1")
        if np.any(probs @ patterns <= 0):
            raise ValueError("block law leaves a coordinate always missing")
        return cls("block_mcar", d, k=int(k), block_patterns=patterns, block_probs=probs)

    @classmethod
    def random_block_mcar(cls, d: int, k: int, rng: np.random.Generator) -> MaskModel:
        """Block law with Dirichlet weights over all ``2^k`` patterns."""
        patterns = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int8)
        probs = rng.dirichlet(np.ones(len(patterns)))
        return cls.block_mcar(d, k, patterns=patterns, probs=probs)

    @classmethod
    def self_masking(
        cls,
        alpha: np.ndarray,
        intercept: np.ndarray | None = None,
        target_rate: float | None = None,
    ) -> MaskModel:
        alpha = np.asarray(alpha, dtype=float)
        intercept = np.zeros_like(alpha) if intercept is None else np.asarray(intercept, float)
        if intercept.shape != alpha.shape or alpha.ndim != 1:
            raise ValueError("alpha and intercept must be vectors of equal length")
        return cls(
            "self_masking", alpha.shape[0], alpha=alpha, intercept=intercept, target_rate=target_rate
        )

    @property
    def is_mcar(self) -> bool:
        return self.kind in MCAR_KINDS

    def sample(
        self, n: int, rng: np.random.Generator, X: np.ndarray | None = None
    ) -> np.ndarray:
        """Draw an ``n x d`` 0/1 float matrix of patterns."""
        d = self.dim
        if self.kind == "ho_mcar":
            return (rng.random((n, d)) < self.rho).astype(float)
        if self.kind == "without_replacement":
            # k smallest of d uniforms -> uniformly random k-subset
            P = np.ones((n, d))
            if self.k:
                missing = np.argpartition(rng.random((n, d)), self.k - 1, axis=1)[:, : self.k]
                np.put_along_axis(P, missing, 0.0, axis=1)
            return P
        if self.kind == "block_mcar":
            nb = d // self.k
            idx = rng.choice(len(self.block_probs), size=(n, nb), p=self.block_probs)
            return self.block_patterns[idx].reshape(n, d).astype(float)
        if X is None:
            raise ValueError("self-masking needs the complete inputs X")
        X = np.asarray(X, dtype=float)
        if X.shape != (n, d):
            raise ValueError(f"X must be {n}x{d}")
        prob = special.expit(X * self.alpha + self.intercept)
        return (rng.random((n, d)) < prob).astype(float)

    def patterns(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact support and probabilities of ``P`` (MCAR kinds only).

        Size grows combinatorially; callers check ``n_patterns`` first.
        """
        d = self.dim
        if self.kind == "ho_mcar":
            pats = np.array(list(itertools.product((1, 0), repeat=d)), dtype=np.int8)
            n_obs = pats.sum(axis=1)
            return pats, self.rho**n_obs * (1 - self.rho) ** (d - n_obs)
        if self.kind == "without_replacement":
            subsets = list(itertools.combinations(range(d), self.k))
            pats = np.ones((len(subsets), d), dtype=np.int8)
            for i, s in enumerate(subsets):
                pats[i, list(s)] = 0
            return pats, np.full(len(subsets), 1.0 / len(subsets))
        if self.kind == "block_mcar":
            nb = d // self.k
            combos = list(itertools.product(range(len(self.block_probs)), repeat=nb))
            pats = np.array([np.concatenate([self.block_patterns[c] for c in combo]) for combo in combos])
            probs = np.array([np.prod(self.block_probs[list(combo)]) for combo in combos])
            return pats.astype(np.int8), probs
        raise ValueError("pattern enumeration is only defined for MCAR masks")

    def n_patterns(self) -> int:
        from math import comb

        if self.kind == "ho_mcar":
            return 2**self.dim if self.rho < 1 else 1
        if self.kind == "without_replacement":
            return comb(self.dim, self.k)
        if self.kind == "block_mcar":
            return len(self.block_probs) ** (self.dim // self.k)
        raise ValueError("pattern enumeration is only defined for MCAR masks")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "dim": self.dim}
        if self.kind == "ho_mcar":
            out["rho"] = self.rho
        elif self.kind == "without_replacement":
            out["k"] = self.k
        elif self.kind == "block_mcar":
            out.update(
                k=self.k,
                block_patterns=self.block_patterns.tolist(),
                block_probs=self.block_probs.tolist(),
            )
        else:
            out.update(
                alpha=self.alpha.tolist(),
                intercept=self.intercept.tolist(),
                target_rate=self.target_rate,
            )
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MaskModel:
        kind, d = data["kind"], int(data["dim"])
        if kind == "ho_mcar":
            return cls.ho_mcar(d, float(data["rho"]))
        if kind == "without_replacement":
            return cls.without_replacement(d, int(data["k"]))
        if kind == "block_mcar":
            return cls.block_mcar(
                d, int(data["k"]), patterns=np.array(data["block_patterns"]), probs=np.array(data["block_probs"])
            )
        if kind == "self_masking":
            return cls.self_masking(
                np.array(data["alpha"]), np.array(data["intercept"]), data.get("target_rate")
            )
        raise ValueError(f"unknown mask kind {kind!r}")


@dataclass(frozen=True, eq=False)
class MaskStats:
    rho: np.ndarray
    V: np.ndarray
    C: np.ndarray
    lambda_max_C: float
    Lambda_imp: float
    L2: float
    rho_se: np.ndarray | None = None
    V_se: np.ndarray | None = None
    # closed-form value quoted for sampling without replacement, (k+1)/(d-k)
    reference_lambda_max_C: float | None = None

    @property
    def sigma_p(self) -> np.ndarray:
        """``E[P P^T] = V + rho rho^T``."""
        return self.V + np.outer(self.rho, self.rho)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "rho": self.rho.tolist(),
            "V": self.V.tolist(),
            "C": self.C.tolist(),
            "lambda_max_C": self.lambda_max_C,
            "Lambda_imp": self.Lambda_imp,
            "L2": self.L2,
        }
        if self.rho_se is not None:
            out["rho_se"] = self.rho_se.tolist()
            out["V_se"] = self.V_se.tolist()
        if self.reference_lambda_max_C is not None:
            out["reference_lambda_max_C"] = self.reference_lambda_max_C
            out["reference_is_upper_bound"] = bool(
                self.lambda_max_C <= self.reference_lambda_max_C + 1e-12
            )
        return out


def _stats_from_moments(rho: np.ndarray, V: np.ndarray, L2: float, **extra: Any) -> MaskStats:
    if np.any(rho <= 0):
        raise ValueError("every coordinate needs a positive observation rate")
    V = (V + V.T) / 2
    C = V / np.outer(rho, rho)
    lam = float(np.linalg.eigvalsh(C)[-1]) if C.size else 0.0
    if abs(lam) < 1e-10:
        lam = 0.0
    return MaskStats(rho, V, C, lam, float(L2) * lam, float(L2), **extra)


def sample_mask(model: MaskModel, x_row: np.ndarray | None = None, seed: int | None = None) -> np.ndarray:
    """Draw one pattern; ``x_row`` is required for self-masking only."""
    rng = np.random.default_rng(seed)
    if model.kind == "self_masking":
        if x_row is None:
            raise ValueError("self-masking needs the complete input row")
        return model.sample(1, rng, np.asarray(x_row, dtype=float)[None, :])[0]
    return model.sample(1, rng)[0]


def exact_mask_stats(model: MaskModel, L2: float = 1.0) -> MaskStats:
    """Closed-form ``rho``, ``V``, ``C`` and ``Lambda_imp = L2 * lambda_max(C)``."""
    d = model.dim
    if model.kind == "ho_mcar":
        r = model.rho
        return _stats_from_moments(np.full(d, r), r * (1 - r) * np.eye(d), L2)
    if model.kind == "without_replacement":
        k = model.k
        r = (d - k) / d
        off = -k * (d - k) / (d**2 * (d - 1)) if d > 1 else 0.0
        V = np.full((d, d), off)
        np.fill_diagonal(V, r * (1 - r))
        ref = (k + 1) / (d - k)
        return _stats_from_moments(np.full(d, r), V, L2, reference_lambda_max_C=ref)
    if model.kind == "block_mcar":
        pats = model.block_patterns.astype(float)
        p = model.block_probs
        rho_b = p @ pats
        V_b = (pats.T * p) @ pats - np.outer(rho_b, rho_b)
        nb = d // model.k
        return _stats_from_moments(np.tile(rho_b, nb), np.kron(np.eye(nb), V_b), L2)
    raise ValueError("closed-form mask statistics exist only for MCAR masks; use mc_mask_stats")


def mc_mask_stats(
    model: MaskModel,
    problem: LinearProblem | None = None,
    n_draws: int = 100_000,
    seed: int | None = None,
    chunk: int = 50_000,
) -> MaskStats:
    """Monte Carlo ``rho``, ``V`` and ``C`` with standard errors.

    Needs ``problem`` for self-masking (patterns depend on ``X``); ``L2`` is
    then ``max_j E[X_j^2]`` of the problem, else 1.
    """
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    if model.kind == "self_masking" and problem is None:
        raise ValueError("self-masking statistics need the linear problem")
    rng = np.random.default_rng(seed)
    d = model.dim
    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    done = 0
    # first pass: first and second moments
    while done < n_draws:
        m = min(chunk, n_draws - done)
        X = problem.sample(m, rng)[0] if model.kind == "self_masking" else None
        P = model.sample(m, rng, X)
        s1 += P.sum(axis=0)
        s2 += P.T @ P
        done += m
    rho = s1 / n_draws
    V = s2 / n_draws - np.outer(rho, rho)
    # second pass on the same stream for the variance of (P_i - rho_i)(P_j - rho_j)
    rng = np.random.default_rng(seed)
    s4 = np.zeros((d, d))
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        X = problem.sample(m, rng)[0] if model.kind == "self_masking" else None
        Pc = model.sample(m, rng, X) - rho
        s4 += (Pc**2).T @ (Pc**2)
        done += m
    V_se = np.sqrt(np.maximum(s4 / n_draws - V**2, 0.0) / n_draws)
    rho_se = np.sqrt(rho * (1 - rho) / n_draws)
    L2 = 1.0 if problem is None else float(np.max(np.diag(problem.second_moment())))
    return _stats_from_moments(rho, V, L2, rho_se=rho_se, V_se=V_se)


def _logistic_mean(alpha: float, c: float, mean: float, sd: float, nodes: np.ndarray, weights: np.ndarray) -> float:
    return float(weights @ special.expit(alpha * (mean + sd * nodes) + c))


def calibrate_self_masking(
    problem: LinearProblem,
    alpha_scale: float = 1.0,
    target_rate: float = 0.5,
    seed: int | None = None,
    check_draws: int = 0,
) -> MaskModel:
    """Logistic self-masking with ``E[P_j] = target_rate`` for every ``j``.

    ``alpha_j = alpha_scale / sd(X_j)``; the intercept solves the Gaussian
    marginal equation by bracketing root finding on Gauss-Hermite quadrature
    (80 nodes).  With ``check_draws > 0`` the achieved rates are re-estimated
    by Monte Carlo from ``seed`` and stored in ``meta``.
    """
    if not 0 < target_rate < 1:
        raise ValueError("target_rate must lie in (0, 1)")
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / weights.sum()
    sd = np.sqrt(np.diag(problem.cov.matrix()))
    mean = problem.mu
    alpha = np.empty(problem.dim)
    intercept = np.empty(problem.dim)
    for j in range(problem.dim):
        if sd[j] <= 1e-12:
            raise ValueError(f"coordinate {j} has degenerate variance; cannot bracket the intercept")
        alpha[j] = alpha_scale / sd[j]

        def gap(c: float, j: int = j) -> float:
            return _logistic_mean(alpha[j], c, mean[j], sd[j], nodes, weights) - target_rate

        span = abs(alpha[j]) * (abs(mean[j]) + 10 * sd[j]) + abs(special.logit(target_rate)) + 1.0
        if gap(-span) * gap(span) > 0:
            raise ValueError(f"intercept for coordinate {j} is not bracketed")
        if gap(0.0) == 0.0:
            intercept[j] = 0.0
        else:
            intercept[j] = optimize.brentq(gap, -span, span, xtol=1e-12, rtol=1e-14)
    model = MaskModel.self_masking(alpha, intercept, target_rate)
    model.meta["alpha_scale"] = alpha_scale
    if check_draws > 0:
        stats = mc_mask_stats(model, problem, check_draws, seed)
        model.meta["achieved_rate"] = stats.rho.tolist()
    return model
