from __future__ import annotations

import numpy as np

RCOND = 1e-10


def min_norm_lstsq(A: np.ndarray, b: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Minimum-norm least-squares solution via the SVD.

    Singular values below ``rcond * s_max`` are treated as zero.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(A.shape[1])
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    keep = s > rcond * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    coef = (u[:, keep].T @ b) / s[keep]
    return vt[keep].T @ coef


def psd_pinv_solve(M: np.ndarray, b: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, float]:
    """Solve ``M x = b`` for symmetric PSD ``M`` with a spectral pseudo-inverse.

    Returns the solution and ``lambda_min(M)``.
    """
    w, v = np.linalg.eigh((M + M.T) / 2)
    top = max(w[-1], 0.0) if w.size else 0.0
    keep = w > rcond * top if top > 0 else np.zeros_like(w, dtype=bool)
    x = v[:, keep] @ ((v[:, keep].T @ b) / w[keep])
    return x, float(w[0]) if w.size else 0.0
