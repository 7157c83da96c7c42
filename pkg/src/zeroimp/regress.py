"""Estimators fitted on (imputed) designs.

All fits are linear without intercept, matching the well-specified model
``Y = X^T theta_star + eps``.  Pattern-by-pattern regression is the one
estimator that consumes the raw ``(X, P)`` pair rather than an imputed
design.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from zeroimp.linalg import min_norm_lstsq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    """Step size for one-pass averaged SGD.

    ``rule="dim"`` sets ``gamma = 1 / (kappa * d * L2_hat * sqrt(n))`` where
    ``L2_hat`` is the largest empirical column second moment;
    ``rule="trace"`` sets ``gamma = 1 / (kappa * trace(Sigma_hat) * sqrt(n))``
    with ``Sigma_hat`` the empirical second moment of the rows; ``rule="fixed"``
    uses ``gamma`` as given.  ``d * L2_hat >= trace(Sigma_hat)``, so the dim
    rule is the more conservative of the two.
    """

    rule: str = "dim"
    gamma: float | None = None
    kappa: float = 1.0
    theta0: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.rule not in ("dim", "trace", "fixed"):
            raise ValueError(f"unknown step-size rule {self.rule!r}")
        if self.rule == "fixed" and (self.gamma is None or self.gamma <= 0):
            raise ValueError("fixed rule needs gamma > 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @classmethod
    def fixed(cls, gamma: float, theta0: np.ndarray | None = None) -> SgdConfig:
        return cls("fixed", gamma, theta0=theta0)

    def step_size(self, X: np.ndarray) -> float:
        if self.rule == "fixed":
            return float(self.gamma)
        n, d = X.shape
        moments = np.mean(X**2, axis=0)
        scale = d * float(np.max(moments)) if self.rule == "dim" else float(np.sum(moments))
        if scale <= 0:
            scale = float(d)
        return 1.0 / (self.kappa * scale * np.sqrt(n))


@dataclass
class FitResult:
    theta_hat: np.ndarray
    method: str
    hyperparameter: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None


@dataclass
class PatternFit:
    """One min-norm least-squares coefficient vector per observed pattern.

    Coefficients are stored full length with zeros on missing coordinates.
    """

    coefs: dict[bytes, np.ndarray]
    dim: int
    method: str = "pattern"
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.coefs)

    def coef_for(self, pattern: np.ndarray) -> np.ndarray | None:
        return self.coefs.get(_key(pattern))


def _key(pattern: np.ndarray) -> bytes:
    return np.asarray(pattern, dtype=np.int8).tobytes()


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes X{X.shape}, y{y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite values")
    return X, y


def fit_averaged_sgd(X: np.ndarray, y: np.ndarray, config: SgdConfig | None = None) -> FitResult:
    """Single pass of constant-step SGD on the square loss, Polyak-Ruppert averaged.

    ``theta_t = theta_{t-1} - gamma * x_t (x_t^T theta_{t-1} - y_t)`` for
    ``t = 1..n`` in row order; the returned average runs over
    ``theta_0..theta_n`` and is divided by ``n + 1``.
    """
    X, y = _check_xy(X, y)
    config = config or SgdConfig()
    n, d = X.shape
    gamma = config.step_size(X)
    theta = np.zeros(d) if config.theta0 is None else np.array(config.theta0, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"theta0 must have length {d}")
    max_sq = float(np.max(np.einsum("ij,ij->i", X, X))) if n else 0.0
    if gamma * max_sq >= 2:
        warnings.warn(
            f"gamma * max ||x_t||^2 = {gamma * max_sq:.3g} >= 2; iterates may diverge",
            RuntimeWarning,
            stacklevel=2,
        )
    total = theta.copy()
    for t in range(n):
        x = X[t]
        theta -= (gamma * (x @ theta - y[t])) * x
        total += theta
    avg = total / (n + 1)
    return FitResult(
        avg,
        "sgd",
        gamma,
        {"final_norm": float(np.linalg.norm(theta)), "average_norm": float(np.linalg.norm(avg))},
    )


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float) -> FitResult:
    """Minimize ``(1/n) ||y - X theta||^2 + lam ||theta||^2``; ``lam = 0`` gives min-norm OLS."""
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n, d = X.shape
    if lam == 0:
        theta = min_norm_lstsq(X, y)
        method = "ols"
    elif d <= n:
        G = X.T @ X / n
        G[np.diag_indices_from(G)] += lam
        theta = np.linalg.solve(G, X.T @ y / n)
        method = "ridge"
    else:
        K = X @ X.T / n
        K[np.diag_indices_from(K)] += lam
        theta = X.T @ np.linalg.solve(K, y / n)
        method = "ridge"
    return FitResult(theta, method, float(lam), {"norm": float(np.linalg.norm(theta))})


def default_lambda_grid(n: int, d: int, size: int = 30) -> np.ndarray:
    """Log-spaced grid over ``[1e-3 d/n, 1e3 d/n]``."""
    return np.logspace(-3, 3, size) * d / n


def loo_errors(X: np.ndarray, y: np.ndarray, lambda_grid: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Exact leave-one-out mean squared error for each ridge level.

    Uses one thin SVD ``X = U S W^T``; the hat matrix at level ``lam`` is
    ``U diag(s^2 / (s^2 + n lam)) U^T`` and the LOO residual is
    ``e_i / (1 - h_ii)``.  Returns the errors and a validity mask (``False``
    where some ``h_ii`` is numerically 1).
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    s2 = s**2
    uty = u.T @ y
    u2 = u**2
    errs = np.full(len(lambda_grid), np.inf)
    valid = np.zeros(len(lambda_grid), dtype=bool)
    for i, lam in enumerate(lambda_grid):
        shrink = s2 / (s2 + n * lam)
        h = u2 @ shrink
        if np.any(h >= 1 - 1e-12):
            continue
        resid = y - u @ (shrink * uty)
        errs[i] = float(np.mean((resid / (1 - h)) ** 2))
        valid[i] = True
    return errs, valid


def fit_ridge_loo(
    X: np.ndarray, y: np.ndarray, lambda_grid: Sequence[float] | None = None
) -> FitResult:
    """Ridge at the grid level with the smallest exact LOO error.

    Ties go to the larger level.
    """
    X, y = _check_xy(X, y)
    n, d = X.shape
    grid = default_lambda_grid(n, d) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid <= 0):
        raise ValueError("LOO grid levels must be positive")
    errs, valid = loo_errors(X, y, grid)
    if not valid.any():
        raise ValueError("every grid level has a leverage of 1")
    skipped = grid[~valid].tolist()
    if skipped:
        log.warning("skipping lambda levels with unit leverage: %s", skipped)
    best = np.min(errs[valid])
    candidates = np.flatnonzero(valid & (errs == best))
    lam = float(np.max(grid[candidates]))
    fit = fit_ridge(X, y, lam)
    fit.method = "ridge-loo"
    fit.diagnostics.update(loo_error=float(best), grid=grid.tolist(), loo_errors=errs.tolist(), skipped=skipped)
    return fit


def fit_pattern_by_pattern(X: np.ndarray, P: np.ndarray, y: np.ndarray) -> PatternFit:
    """Min-norm least squares on the observed coordinates, separately per pattern."""
    X, y = _check_xy(X, y)
    P = np.asarray(P)
    if P.shape != X.shape:
        raise ValueError("X and P must have the same shape")
    d = X.shape[1]
    Pk = P.astype(np.int8)
    uniq, inverse = np.unique(Pk, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    coefs: dict[bytes, np.ndarray] = {}
    for g, pattern in enumerate(uniq):
        rows = inverse == g
        obs = pattern.astype(bool)
        theta = np.zeros(d)
        if obs.any():
            theta[obs] = min_norm_lstsq(X[rows][:, obs], y[rows])
        coefs[_key(pattern)] = theta
    sizes = np.bincount(inverse)
    return PatternFit(coefs, d, diagnostics={"n_patterns": len(coefs), "max_group": int(sizes.max(initial=0))})


def predict(fit: FitResult | PatternFit, X_test: np.ndarray, P_test: np.ndarray | None = None) -> np.ndarray:
    """Linear predictions; pattern fits dispatch on ``P_test`` and predict 0 on unseen patterns."""
    X_test = np.asarray(X_test, dtype=float)
    if isinstance(fit, PatternFit):
        if P_test is None:
            raise ValueError("pattern-by-pattern prediction needs the test mask")
        if X_test.shape[1] != fit.dim or np.shape(P_test) != X_test.shape:
            raise ValueError("dimension mismatch")
        Pk = np.asarray(P_test).astype(np.int8)
        out = np.zeros(X_test.shape[0])
        uniq, inverse = np.unique(Pk, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        Xo = np.where(Pk == 1, X_test, 0.0)
        for g, pattern in enumerate(uniq):
            theta = fit.coefs.get(_key(pattern))
            if theta is not None:
                rows = inverse == g
                out[rows] = Xo[rows] @ theta
        return out
    if X_test.ndim != 2 or X_test.shape[1] != fit.theta_hat.shape[0]:
        raise ValueError(f"expected {fit.theta_hat.shape[0]} columns, got {X_test.shape}")
    return X_test @ fit.theta_hat
