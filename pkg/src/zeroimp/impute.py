"""Imputers turning ``(X, P)`` into a complete design.

Only entries with ``P == 0`` are ever written; observed entries are copied
through untouched.
"""

from __future__ import annotations

import numpy as np

from zeroimp.linalg import min_norm_lstsq


def _check(X: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    P = np.asarray(P, dtype=float)
    if X.shape != P.shape or X.ndim != 2:
        raise ValueError(f"X and P must be matching 2-d arrays, got {X.shape} and {P.shape}")
    return X, P


def impute_zero(X: np.ndarray, P: np.ndarray) -> np.ndarray:
    X, P = _check(X, P)
    out = X.copy()
    out[P == 0] = 0.0
    return out


class ZeroImputer:
    kind = "zero"
    fitted = True

    def fit(self, X: np.ndarray, P: np.ndarray, y: np.ndarray | None = None) -> ZeroImputer:
        return self

    def transform(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        return impute_zero(X, P)

    def fit_transform(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        return impute_zero(X, P)


class OptimalConstantImputer:
    """Per-feature constant imputation learned through the augmented linear model.

    The model is min-norm least squares of ``y`` on ``[P * X, P, 1]``.  With
    ``a`` the ``P * X`` block and ``b`` the ``P`` block, imputing ``c_j`` and
    regressing linearly gives the same predictor when ``c_j = -b_j / a_j``;
    ``c_j`` is set to 0 where ``|a_j| <= 1e-12``.
    """

    kind = "opti"

    def __init__(self) -> None:
        self.fitted = False
        self.coef_: np.ndarray | None = None
        self.constants_: np.ndarray | None = None

    @staticmethod
    def _design(X: np.ndarray, P: np.ndarray) -> np.ndarray:
        return np.hstack([np.where(P == 1, X, 0.0), P, np.ones((X.shape[0], 1))])

    def fit(self, X: np.ndarray, P: np.ndarray, y: np.ndarray) -> OptimalConstantImputer:
        X, P = _check(X, P)
        y = np.asarray(y, dtype=float)
        d = X.shape[1]
        self.coef_ = min_norm_lstsq(self._design(X, P), y)
        a, b = self.coef_[:d], self.coef_[d : 2 * d]
        safe = np.abs(a) > 1e-12
        self.constants_ = np.where(safe, -b / np.where(safe, a, 1.0), 0.0)
        self.fitted = True
        return self

    def transform(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("fit the imputer before transform")
        X, P = _check(X, P)
        return np.where(P == 1, X, self.constants_)

    def predict(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Prediction of the augmented model itself."""
        if not self.fitted:
            raise RuntimeError("fit the imputer before predict")
        X, P = _check(X, P)
        return self._design(X, P) @ self.coef_


def fit_optimal_constant(X: np.ndarray, P: np.ndarray, y: np.ndarray) -> OptimalConstantImputer:
    return OptimalConstantImputer().fit(X, P, y)


class IterativeConditionalImputer:
    """Chained ridge regressions, one column at a time.

    Missing entries start at the observed column means.  Each round visits
    the columns in order ``0..d-1``, regresses the observed rows of column
    ``j`` on every other (current) column plus an intercept with penalty
    ``ridge`` (objective ``mean sq. error + ridge * ||w||^2``), and
    overwrites the missing entries of ``j`` with the predictions.  The
    per-round coefficients are kept so ``transform`` can replay the same
    sweeps on new rows.
    """

    kind = "ice"

    def __init__(self, rounds: int = 10, ridge: float = 1e-3) -> None:
        if rounds < 1:
            raise ValueError("rounds must be at least 1")
        if ridge < 0:
            raise ValueError("ridge must be non-negative")
        self.rounds = rounds
        self.ridge = ridge
        self.fitted = False
        self.means_: np.ndarray | None = None
        # (rounds, d, d) weights with zero diagonal, (rounds, d) intercepts
        self.weights_: np.ndarray | None = None
        self.intercepts_: np.ndarray | None = None

    def fit(self, X: np.ndarray, P: np.ndarray, y: np.ndarray | None = None) -> IterativeConditionalImputer:
        self.fit_transform(X, P)
        return self

    def fit_transform(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        X, P = _check(X, P)
        n, d = X.shape
        obs = P == 1
        counts = obs.sum(axis=0)
        if np.any(counts == 0):
            raise ValueError(f"columns {np.flatnonzero(counts == 0).tolist()} are fully missing")
        self.means_ = np.where(obs, X, 0.0).sum(axis=0) / counts
        Z = np.where(obs, X, self.means_)
        self.weights_ = np.zeros((self.rounds, d, d))
        self.intercepts_ = np.tile(self.means_, (self.rounds, 1))
        if d == 1 or obs.all():
            self.fitted = True
            return Z
        for t in range(self.rounds):
            for j in range(d):
                miss = ~obs[:, j]
                if not miss.any():
                    continue
                others = np.arange(d) != j
                rows = obs[:, j]
                w, c = _ridge_with_intercept(Z[rows][:, others], Z[rows, j], self.ridge)
                self.weights_[t, j, others] = w
                self.intercepts_[t, j] = c
                Z[miss, j] = Z[miss][:, others] @ w + c
        self.fitted = True
        return Z

    def transform(self, X: np.ndarray, P: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise RuntimeError("fit the imputer before transform")
        X, P = _check(X, P)
        obs = P == 1
        Z = np.where(obs, X, self.means_)
        if obs.all():
            return Z
        for t in range(self.rounds):
            for j in range(X.shape[1]):
                miss = ~obs[:, j]
                if miss.any():
                    Z[miss, j] = Z[miss] @ self.weights_[t, j] + self.intercepts_[t, j]
        return Z


def _ridge_with_intercept(A: np.ndarray, b: np.ndarray, ridge: float) -> tuple[np.ndarray, float]:
    # centering makes the unpenalized intercept exact
    m = A.shape[0]
    a_mean = A.mean(axis=0)
    b_mean = b.mean()
    Ac = A - a_mean
    bc = b - b_mean
    if ridge == 0:
        w = min_norm_lstsq(Ac, bc)
    elif Ac.shape[1] <= m:
        G = Ac.T @ Ac / m
        G[np.diag_indices_from(G)] += ridge
        w = np.linalg.solve(G, Ac.T @ bc / m)
    else:
        K = Ac @ Ac.T / m
        K[np.diag_indices_from(K)] += ridge
        w = Ac.T @ np.linalg.solve(K, bc / m)
    return w, float(b_mean - a_mean @ w)


def fit_iterative_conditional(
    X: np.ndarray, P: np.ndarray, rounds: int = 10, ridge: float = 1e-3
) -> IterativeConditionalImputer:
    return IterativeConditionalImputer(rounds, ridge).fit(X, P)


def make_imputer(kind: str, rounds: int = 10, ridge: float = 1e-3):
    if kind == "zero":
        return ZeroImputer()
    if kind == "opti":
        return OptimalConstantImputer()
    if kind == "ice":
        return IterativeConditionalImputer(rounds, ridge)
    raise ValueError(f"unknown imputer {kind!r}")
