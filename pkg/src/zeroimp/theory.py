"""Closed-form population quantities for zero imputation under MCAR masks.

With ``Sigma = E[X X^T]``, ``H = diag(rho)`` and ``Sigma_P = E[P P^T]``, the
risk of ``theta`` applied to ``P * X`` is the quadratic

    R_imp(theta) = E[Y^2] - 2 theta^T H Sigma theta_star + theta^T (Sigma_P * Sigma) theta,

equivalently ``R(H theta) + ||theta||^2_{V * Sigma}`` (``*`` is the Hadamard
product).  Everything below is derived from that quadratic and the
eigenpairs of ``Sigma``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from zeroimp.linalg import psd_pinv_solve
from zeroimp.masking import MaskModel, MaskStats
from zeroimp.model import LinearProblem, population_risk


def _tol(b_imp: float, scale: float = 1e-9) -> float:
    return scale * (1.0 + abs(b_imp))


def moment_bounds(problem: LinearProblem) -> tuple[float, float]:
    """``(ell^2, L^2)``: smallest and largest ``E[X_j^2]``."""
    diag = np.diag(problem.second_moment())
    return float(diag.min()), float(diag.max())


def imputed_covariance(problem: LinearProblem, stats: MaskStats) -> np.ndarray:
    """``E[X_imp X_imp^T] = Sigma_P * Sigma``."""
    return stats.sigma_p * problem.second_moment()


def imputed_risk(problem: LinearProblem, stats: MaskStats, theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.dim,) or stats.rho.shape != (problem.dim,):
        raise ValueError("dimension mismatch between problem, mask statistics and theta")
    S = problem.second_moment()
    cross = theta @ (stats.rho * (S @ problem.theta_star))
    quad = theta @ imputed_covariance(problem, stats) @ theta
    return float(problem.second_moment_y() - 2 * cross + quad)


def imputed_risk_decomposed(problem: LinearProblem, stats: MaskStats, theta: np.ndarray) -> float:
    """``R(diag(rho) theta) + ||theta||^2_{V * Sigma}``; algebraically equal to :func:`imputed_risk`."""
    theta = np.asarray(theta, dtype=float)
    penalty = theta @ (stats.V * problem.second_moment()) @ theta
    return population_risk(problem, stats.rho * theta) + float(penalty)


def optimal_imputed_predictor(problem: LinearProblem, stats: MaskStats) -> tuple[np.ndarray, float]:
    """Best linear predictor on zero-imputed inputs and its risk.

    Solves ``(Sigma_P * Sigma) theta = rho * (Sigma theta_star)``.  The
    right-hand side always lies in the range of the left-hand matrix, so a
    spectral pseudo-inverse returns a minimizer even when ``Sigma_imp`` is
    singular (e.g. no missingness with a low-rank ``Sigma``).
    """
    S = problem.second_moment()
    rhs = stats.rho * (S @ problem.theta_star)
    theta, _ = psd_pinv_solve(imputed_covariance(problem, stats), rhs)
    return theta, imputed_risk(problem, stats, theta)


def imputation_bias(problem: LinearProblem, stats: MaskStats) -> float:
    """``R*_imp - R*``, with ``R* = sigma^2`` in the well-specified model."""
    _, risk = optimal_imputed_predictor(problem, stats)
    bias = risk - problem.sigma2
    if -1e-12 <= bias < 0:
        bias = 0.0
    return float(bias)


def ridge_bias(problem: LinearProblem, lam: float) -> float:
    """``lam * ||theta_star||^2_{Sigma (Sigma + lam I)^{-1}}`` from the eigenpairs of ``Sigma``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return 0.0
    vals, vecs = problem.spectrum()
    align = (vecs.T @ problem.theta_star) ** 2
    return float(np.sum(lam * vals / (vals + lam) * align))


@dataclass
class TheoryReport:
    """Bias quantities and bound checks for one (problem, MCAR mask) pair.

    ``lambda_imp``/``lambda_imp_prime`` and ``sandwich_ok`` are only defined
    for Ho-MCAR masks; ``mcar_bound_ok`` checks ``B_imp <= B_ridge(Lambda_imp)``
    for every MCAR mask.  ``norm_ok`` is vacuously true when ``V`` is singular
    (``norm_bound`` is then ``None``).
    """

    sigma_imp: np.ndarray
    theta_imp_star: np.ndarray
    B_imp: float
    B_ridge_lambda_prime: float | None
    B_ridge_lambda: float | None
    B_ridge_Lambda: float
    lambda_imp: float | None
    lambda_imp_prime: float | None
    Lambda_imp: float
    ell2: float
    L2: float
    theta_imp_norm2: float
    norm_bound: float | None
    lambda_min_sigma_imp: float
    sigma_imp_floor: float | None
    eps_tol: float
    sandwich_ok: bool | None
    mcar_bound_ok: bool
    norm_ok: bool
    floor_ok: bool | None

    @property
    def all_ok(self) -> bool:
        flags = (self.sandwich_ok, self.mcar_bound_ok, self.norm_ok, self.floor_ok)
        return all(f is not False for f in flags)

    def to_dict(self, include_matrices: bool = False) -> dict[str, Any]:
        out = asdict(self)
        if include_matrices:
            out["sigma_imp"] = self.sigma_imp.tolist()
        else:
            del out["sigma_imp"]
        out["theta_imp_star"] = self.theta_imp_star.tolist()
        out["all_ok"] = self.all_ok
        return out


def bound_bundle(
    problem: LinearProblem,
    mask_model: MaskModel,
    stats: MaskStats,
    *,
    tol_scale: float = 1e-9,
    upper_penalty_scale: float = 1.0,
) -> TheoryReport:
    """Imputation bias against its ridge-bias bounds and the norm control.

    ``upper_penalty_scale`` multiplies the upper-bound penalties; anything
    other than 1 deliberately corrupts the check (negative controls only).
    """
    if not mask_model.is_mcar:
        raise ValueError("bias bounds require an MCAR mask")
    ell2, L2 = moment_bounds(problem)
    sigma_imp = imputed_covariance(problem, stats)
    theta_imp, risk_imp = optimal_imputed_predictor(problem, stats)
    b_imp = risk_imp - problem.sigma2
    if -1e-12 <= b_imp < 0:
        b_imp = 0.0
    eps = _tol(b_imp, tol_scale)

    Lambda = L2 * stats.lambda_max_C * upper_penalty_scale
    b_Lambda = ridge_bias(problem, Lambda)
    mcar_ok = b_imp <= b_Lambda + eps

    lam = lam_prime = b_lam = b_lam_prime = None
    sandwich_ok = floor_ok = None
    floor = None
    lam_min_imp = float(np.linalg.eigvalsh(sigma_imp)[0])
    if mask_model.kind == "ho_mcar":
        rho = mask_model.rho
        lam_prime = ell2 * (1 - rho) / rho
        lam = L2 * (1 - rho) / rho
        b_lam_prime = ridge_bias(problem, lam_prime)
        b_lam = ridge_bias(problem, lam * upper_penalty_scale)
        sandwich_ok = b_lam_prime - eps <= b_imp <= b_lam + eps
        floor = rho * (1 - rho) * ell2
        floor_ok = lam_min_imp >= floor - eps

    v_min = float(np.linalg.eigvalsh(stats.V)[0])
    norm2 = float(theta_imp @ theta_imp)
    norm_bound = None
    norm_ok = True
    if v_min > 1e-12 and ell2 > 0:
        norm_bound = b_imp / (ell2 * v_min)
        norm_ok = norm2 <= norm_bound + eps

    return TheoryReport(
        sigma_imp=sigma_imp,
        theta_imp_star=theta_imp,
        B_imp=float(b_imp),
        B_ridge_lambda_prime=b_lam_prime,
        B_ridge_lambda=b_lam,
        B_ridge_Lambda=b_Lambda,
        lambda_imp=lam,
        lambda_imp_prime=lam_prime,
        Lambda_imp=Lambda,
        ell2=ell2,
        L2=L2,
        theta_imp_norm2=norm2,
        norm_bound=norm_bound,
        lambda_min_sigma_imp=lam_min_imp,
        sigma_imp_floor=floor,
        eps_tol=eps,
        sandwich_ok=sandwich_ok,
        mcar_bound_ok=bool(mcar_ok),
        norm_ok=bool(norm_ok),
        floor_ok=floor_ok,
    )


def _equal_nonzero(vals: np.ndarray) -> bool:
    return vals.size > 0 and bool(np.ptp(vals) <= 1e-9 * vals.max())


def example_bound(problem: LinearProblem, stats: MaskStats, which: str) -> float:
    """Structured upper bound on ``B_imp`` for three covariance families.

    The penalty is ``Lambda_imp = L^2 lambda_max(C)`` (``lambda_imp`` for
    Ho-MCAR) and ``T = trace(Sigma)``.

    ``"lowrank_equal"``
        ``Lambda * r / T * ||theta*||^2_Sigma`` for ``r`` equal nonzero eigenvalues.
    ``"compatible_decay"``
        ``Lambda * r / T * H_r * ||theta*||^2_Sigma`` (``H_r`` the harmonic
        number) when ``(v_j^T theta*)^2`` is non-increasing over the rank.
    ``"spiked"``
        ``Lambda * r / (T - d eta) * ||theta*||^2_Sigma + eta ||theta*_tail||^2``;
        infinite when ``T <= d eta``.
    """
    _, L2 = moment_bounds(problem)
    Lambda = L2 * stats.lambda_max_C
    vals, vecs = problem.spectrum()
    T = float(vals.sum())
    signal = problem.signal_norm2()
    r = vals.size
    if which == "lowrank_equal":
        if not _equal_nonzero(vals):
            raise ValueError("structure mismatch: nonzero eigenvalues are not all equal")
        return Lambda * r / T * signal
    if which == "compatible_decay":
        align = (vecs.T @ problem.theta_star) ** 2
        if np.any(np.diff(align) > 1e-12 * max(align.max(initial=0.0), 1e-300)):
            raise ValueError("structure mismatch: alignment (v_j^T theta*)^2 is not non-increasing")
        harmonic = float(np.sum(1.0 / np.arange(1, r + 1)))
        return Lambda * r / T * harmonic * signal
    if which == "spiked":
        cov = problem.cov
        if cov.kind != "spiked" or not problem.centered:
            raise ValueError("structure mismatch: not a centered spiked covariance")
        if not _equal_nonzero(cov.low.eigvals):
            raise ValueError("structure mismatch: low-rank block eigenvalues are not all equal")
        d, eta = problem.dim, cov.eta
        denom = T - d * eta
        if denom <= 0:
            return math.inf
        tail = problem.theta_star[cov.split :]
        return Lambda * cov.low.rank / denom * signal + eta * float(tail @ tail)
    raise ValueError(f"unknown example structure {which!r}")


def conditional_residual_variance(cov: np.ndarray, theta: np.ndarray, observed: np.ndarray) -> float:
    """``Var(theta^T X | X_o)`` for a Gaussian ``X`` with covariance ``cov``."""
    b = cov @ theta
    total = float(theta @ b)
    o = np.asarray(observed, dtype=bool)
    if not o.any():
        return total
    if o.all():
        return 0.0
    x, _ = psd_pinv_solve(cov[np.ix_(o, o)], b[o])
    return max(total - float(b[o] @ x), 0.0)


def gaussian_mis_bayes_risk(
    problem: LinearProblem,
    mask_model: MaskModel,
    pattern_budget: int = 4096,
    seed: int | None = None,
    n_mc: int = 20_000,
) -> tuple[float, float]:
    """Bayes risk given ``(X_imp, P)`` for a Gaussian problem and MCAR mask.

    ``R*_mis = sigma^2 + E_P[Var(X^T theta* | X_obs)]``.  Patterns are
    enumerated exactly when the support has at most ``pattern_budget``
    elements (standard error 0), otherwise ``n_mc`` patterns are sampled.
    Returns ``(risk, standard_error)``.
    """
    if problem.noise_kind != "gaussian":
        raise ValueError("closed form needs a Gaussian problem")
    if not mask_model.is_mcar:
        raise ValueError("closed form needs an MCAR mask")
    cov = problem.cov.matrix()
    theta = problem.theta_star
    if mask_model.n_patterns() <= pattern_budget:
        pats, probs = mask_model.patterns()
        keep = probs > 0
        values = np.array([conditional_residual_variance(cov, theta, p) for p in pats[keep]])
        return problem.sigma2 + float(probs[keep] @ values), 0.0
    rng = np.random.default_rng(seed)
    pats = mask_model.sample(n_mc, rng).astype(np.int8)
    uniq, inverse, counts = np.unique(pats, axis=0, return_inverse=True, return_counts=True)
    per = np.array([conditional_residual_variance(cov, theta, p) for p in uniq])
    values = per[inverse.reshape(-1)]
    return problem.sigma2 + float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_mc))
