"""Population linear problems with structured covariance, and dataset sampling.

The second-moment matrix ``E[X X^T]`` drives every closed-form risk in this
package.  Covariance specs keep an exact spectral form (eigenvalues and
orthonormal eigenvectors) next to the generative one so that the theory
module never has to recover a spectrum it already knows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from zeroimp.masking import MaskModel

COV_KINDS = ("identity", "lowrank_equal", "lowrank_factor", "spiked", "explicit")


def _orthonormal_columns(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    # sign fix makes the draw unique given the seed
    return q * np.sign(np.diag(r))


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Covariance of the centered input ``X - mu``.

    ``eigvals``/``eigvecs`` hold the nonzero part of the spectrum, sorted in
    decreasing order; ``eigvecs`` has orthonormal columns.  ``factor`` is set
    for factor-form covariances (``Sigma = A A^T``) and is what sampling uses.
    For the spiked kind, ``rank`` is the low-rank block rank, ``split`` the
    number of leading coordinates in the low-rank block and ``eta`` the
    isotropic level of the trailing residual block.
    """

    kind: str
    dim: int
    eigvals: np.ndarray
    eigvecs: np.ndarray
    factor: np.ndarray | None = None
    rank: int | None = None
    split: int | None = None
    eta: float | None = None
    low: CovarianceSpec | None = None
    dense: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in COV_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.eigvecs.shape != (self.dim, self.eigvals.shape[0]):
            raise ValueError("eigvecs must be dim x len(eigvals)")
        if np.any(self.eigvals < 0):
            raise ValueError("covariance eigenvalues must be non-negative")

    # -- constructors -------------------------------------------------------

    @classmethod
    def identity(cls, d: int) -> CovarianceSpec:
        return cls("identity", d, np.ones(d), np.eye(d), rank=d)

    @classmethod
    def lowrank_equal(
        cls, d: int, r: int, trace: float | None = None, seed: int | None = None
    ) -> CovarianceSpec:
        """Rank-``r`` covariance whose nonzero eigenvalues all equal ``trace / r``.

        The eigenbasis is a Haar-random ``d x r`` frame drawn from ``seed``.
        ``trace`` defaults to ``d``.
        """
        if not 1 <= r <= d:
            raise ValueError(f"rank must satisfy 1 <= r <= d, got r={r}, d={d}")
        trace = float(d) if trace is None else float(trace)
        basis = _orthonormal_columns(d, r, np.random.default_rng(seed))
        return cls("lowrank_equal", d, np.full(r, trace / r), basis, rank=r)

    @classmethod
    def lowrank_factor(cls, A: np.ndarray, normalize: bool = False) -> CovarianceSpec:
        A = np.array(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("factor must be a 2-d array")
        d, r = A.shape
        if normalize:
            A = A * np.sqrt(d / np.sum(A**2))
        u, s, _ = np.linalg.svd(A, full_matrices=False)
        keep = s > 1e-12 * max(s.max(initial=0.0), 1.0)
        return cls("lowrank_factor", d, s[keep] ** 2, u[:, keep], factor=A, rank=int(keep.sum()))

    @classmethod
    def spiked(cls, low: CovarianceSpec, eta: float, resid_dim: int) -> CovarianceSpec:
        """Block-diagonal ``diag(low, eta * I_resid_dim)``.

        The low-rank block occupies the leading ``low.dim`` coordinates.
        """
        if eta < 0:
            raise ValueError("eta must be non-negative")
        d = low.dim + resid_dim
        vecs_low = np.vstack([low.eigvecs, np.zeros((resid_dim, low.eigvecs.shape[1]))])
        vals = low.eigvals
        vecs = vecs_low
        if eta > 0 and resid_dim > 0:
            resid = np.vstack([np.zeros((low.dim, resid_dim)), np.eye(resid_dim)])
            vals = np.concatenate([vals, np.full(resid_dim, float(eta))])
            vecs = np.hstack([vecs_low, resid])
            order = np.argsort(-vals, kind="stable")
            vals, vecs = vals[order], vecs[:, order]
        return cls(
            "spiked", d, vals, vecs, rank=low.rank, split=low.dim, eta=float(eta), low=low
        )

    @classmethod
    def explicit(cls, M: np.ndarray) -> CovarianceSpec:
        M = np.array(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("explicit covariance must be square")
        if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("explicit covariance must be symmetric")
        w, v = np.linalg.eigh((M + M.T) / 2)
        scale = max(abs(w).max(initial=0.0), 1.0)
        if w.min(initial=0.0) < -1e-10 * scale:
            raise ValueError(f"explicit covariance is not PSD (min eigenvalue {w.min():.3e})")
        keep = w > 1e-12 * scale
        order = np.argsort(-w[keep])
        M = (M + M.T) / 2
        return cls(
            "explicit", M.shape[0], w[keep][order], v[:, keep][:, order], rank=int(keep.sum()), dense=M
        )

    # -- access -------------------------------------------------------------

    def matrix(self) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(self.dim)
        if self.dense is not None:
            return self.dense.copy()
        if self.factor is not None:
            return self.factor @ self.factor.T
        M = (self.eigvecs * self.eigvals) @ self.eigvecs.T
        return (M + M.T) / 2

    def trace(self) -> float:
        return float(self.eigvals.sum())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` centered Gaussian rows with this covariance."""
        if self.factor is not None:
            return rng.standard_normal((n, self.factor.shape[1])) @ self.factor.T
        if self.kind == "spiked":
            low = self.low.sample(n, rng)
            resid = np.sqrt(self.eta) * rng.standard_normal((n, self.dim - self.split))
            return np.hstack([low, resid])
        root = self.eigvecs * np.sqrt(self.eigvals)
        return rng.standard_normal((n, root.shape[1])) @ root.T

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "dim": self.dim}
        if self.kind == "spiked":
            out.update(eta=self.eta, low=self.low.to_dict())
        elif self.factor is not None:
            out["factor"] = self.factor.tolist()
        elif self.dense is not None:
            out["matrix"] = self.dense.tolist()
        elif self.kind != "identity":
            out["eigvals"] = self.eigvals.tolist()
            out["eigvecs"] = self.eigvecs.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CovarianceSpec:
        kind = data["kind"]
        if kind == "identity":
            return cls.identity(int(data["dim"]))
        if kind == "spiked":
            low = cls.from_dict(data["low"])
            return cls.spiked(low, float(data["eta"]), int(data["dim"]) - low.dim)
        if "matrix" in data:
            return cls.explicit(np.asarray(data["matrix"], dtype=float))
        if "factor" in data:
            return cls.lowrank_factor(np.asarray(data["factor"], dtype=float))
        vals = np.asarray(data["eigvals"], dtype=float)
        vecs = np.asarray(data["eigvecs"], dtype=float).reshape(int(data["dim"]), len(vals))
        return cls(kind, int(data["dim"]), vals, vecs, rank=len(vals))


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """Well-specified Gaussian linear model ``Y = X^T theta_star + eps``.

    ``X = mu + Z`` with ``Z ~ N(0, cov)`` and ``eps ~ N(0, sigma2)``
    independent of ``X``.
    """

    cov: CovarianceSpec
    theta_star: np.ndarray
    sigma2: float
    mu: np.ndarray = field(default=None)  # type: ignore[assignment]
    noise_kind: str = "gaussian"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        d = self.cov.dim
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float))
        if self.mu is None:
            object.__setattr__(self, "mu", np.zeros(d))
        else:
            object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if self.theta_star.shape != (d,) or self.mu.shape != (d,):
            raise ValueError("theta_star and mu must have length cov.dim")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.noise_kind != "gaussian":
            raise ValueError("only Gaussian noise is supported")

    @property
    def dim(self) -> int:
        return self.cov.dim

    @property
    def centered(self) -> bool:
        return not np.any(self.mu)

    def second_moment(self) -> np.ndarray:
        """``E[X X^T]``; equals the covariance when ``mu = 0``."""
        S = self.cov.matrix()
        if not self.centered:
            S = S + np.outer(self.mu, self.mu)
        return S

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero eigenpairs of the second moment, decreasing order."""
        if self.centered:
            return self.cov.eigvals, self.cov.eigvecs
        w, v = np.linalg.eigh(self.second_moment())
        keep = w > 1e-12 * max(w.max(), 1.0)
        order = np.argsort(-w[keep])
        return w[keep][order], v[:, keep][:, order]

    def signal_norm2(self) -> float:
        """``||theta_star||^2_Sigma``, the excess risk of the zero predictor."""
        vals, vecs = self.spectrum()
        return float(np.sum(vals * (vecs.T @ self.theta_star) ** 2))

    def second_moment_y(self) -> float:
        return self.signal_norm2() + self.sigma2

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        X = self.cov.sample(n, rng) + self.mu
        y = X @ self.theta_star + np.sqrt(self.sigma2) * rng.standard_normal(n)
        return X, y

    def to_dict(self) -> dict[str, Any]:
        return {
            "cov": self.cov.to_dict(),
            "theta_star": self.theta_star.tolist(),
            "sigma2": self.sigma2,
            "mu": self.mu.tolist(),
            "noise_kind": self.noise_kind,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LinearProblem:
        return cls(
            CovarianceSpec.from_dict(data["cov"]),
            np.asarray(data["theta_star"], dtype=float),
            float(data["sigma2"]),
            np.asarray(data["mu"], dtype=float),
            data.get("noise_kind", "gaussian"),
            dict(data.get("meta", {})),
        )


def _draw_factor(d: int, r: int, rng: np.random.Generator, normalize: bool) -> np.ndarray:
    for _ in range(3):
        A = rng.standard_normal((d, r))
        if np.linalg.matrix_rank(A) == r:
            if normalize:
                A *= np.sqrt(d / np.sum(A**2))
            return A
    raise RuntimeError(f"could not draw a full column rank {d}x{r} factor in 3 attempts")


def build_lowrank_problem(
    d: int,
    r: int,
    beta: np.ndarray | None = None,
    mu: np.ndarray | None = None,
    sigma2: float = 2.0,
    seed: int | None = None,
    *,
    normalize: bool = True,
    factor: np.ndarray | None = None,
) -> LinearProblem:
    """Low-rank model ``X = A Z + mu``, ``Z ~ N(0, I_r)``, ``theta_star = (A^+)^T beta``.

    ``A`` has i.i.d. standard normal entries, rescaled to ``trace(A A^T) = d``
    when ``normalize`` is set.  Pass ``factor`` to fix ``A`` instead of
    drawing it; ``beta`` defaults to a ``N(0, I_r)`` draw.
    """
    if not 1 <= r <= d:
        raise ValueError(f"rank must satisfy 1 <= r <= d, got r={r}, d={d}")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    rng = np.random.default_rng(seed)
    if factor is None:
        A = _draw_factor(d, r, rng, normalize)
    else:
        A = np.array(factor, dtype=float)
        if A.shape != (d, r):
            raise ValueError(f"factor must be {d}x{r}")
        if np.linalg.matrix_rank(A) < r:
            raise ValueError("factor is rank deficient")
    beta = rng.standard_normal(r) if beta is None else np.asarray(beta, dtype=float)
    if beta.shape != (r,):
        raise ValueError(f"beta must have length r={r}")
    theta = np.linalg.pinv(A).T @ beta
    meta = {"model": "lowrank", "d": d, "r": r, "seed": seed, "beta": beta.tolist()}
    return LinearProblem(CovarianceSpec.lowrank_factor(A), theta, float(sigma2), mu, meta=meta)


def build_spiked_problem(
    d: int,
    r: int,
    theta_tail_norm: float = 0.2,
    eta: float = 1.0,
    seed: int | None = None,
    *,
    sigma2: float = 2.0,
    beta: np.ndarray | None = None,
    normalize: bool = True,
) -> LinearProblem:
    """Spiked model: low-rank block on the first ``d/2`` coordinates, isotropic tail.

    The tail block is ``N(0, eta * I_{d/2})`` and carries a coefficient
    vector of Euclidean norm ``theta_tail_norm`` in a uniformly random
    direction.
    """
    if d % 2:
        raise ValueError(f"spiked model needs an even dimension, got d={d}")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    half = d // 2
    rng = np.random.default_rng(seed)
    low = build_lowrank_problem(
        half, r, beta=beta, sigma2=sigma2, seed=int(rng.integers(2**63)), normalize=normalize
    )
    direction = rng.standard_normal(half)
    tail = theta_tail_norm * direction / np.linalg.norm(direction)
    cov = CovarianceSpec.spiked(low.cov, eta, half)
    meta = {
        "model": "spiked",
        "d": d,
        "r": r,
        "seed": seed,
        "eta": eta,
        "theta_tail_norm": theta_tail_norm,
        "beta": low.meta["beta"],
    }
    return LinearProblem(cov, np.concatenate([low.theta_star, tail]), float(sigma2), meta=meta)


def population_risk(problem: LinearProblem, theta: np.ndarray) -> float:
    """``R(theta) = ||theta - theta_star||^2_Sigma + sigma^2`` with ``Sigma = E[X X^T]``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.dim,):
        raise ValueError(f"theta must have length {problem.dim}")
    diff = theta - problem.theta_star
    return float(diff @ problem.second_moment() @ diff + problem.sigma2)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    P: np.ndarray
    X_imp: np.ndarray
    seed: int | None
    problem: LinearProblem | None = None
    mask: MaskModel | None = None

    def __post_init__(self) -> None:
        n, d = self.X.shape
        if self.y.shape != (n,) or self.P.shape != (n, d) or self.X_imp.shape != (n, d):
            raise ValueError("inconsistent dataset shapes")
        for arr in (self.X, self.y, self.P, self.X_imp):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path: str | Path) -> Path:
        """Write ``x_0..x_{d-1}, y, p_0..p_{d-1}`` plus a ``.meta.json`` sidecar."""
        path = Path(path)
        d = self.dim
        header = [f"x_{j}" for j in range(d)] + ["y"] + [f"p_{j}" for j in range(d)]
        body = np.hstack([self.X, self.y[:, None], self.P])
        fmt = ["%.17g"] * (d + 1) + ["%d"] * d
        np.savetxt(path, body, delimiter=",", header=",".join(header), comments="", fmt=fmt)
        meta = {
            "seed": self.seed,
            "n": self.n,
            "d": d,
            "problem": None if self.problem is None else self.problem.to_dict(),
            "mask": None if self.mask is None else self.mask.to_dict(),
        }
        meta_path = path.with_suffix(".meta.json")
        meta_path.write_text(json.dumps(meta, indent=2))
        return meta_path

    @classmethod
    def from_csv(cls, path: str | Path) -> Dataset:
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        d = sum(1 for h in header if h.startswith("x_"))
        if len(header) != 2 * d + 1 or header[d] != "y":
            raise ValueError(f"{path}: header is not x_0..x_{{d-1}}, y, p_0..p_{{d-1}}")
        body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        X, y, P = body[:, :d], body[:, d], body[:, d + 1 :]
        seed = None
        meta_path = path.with_suffix(".meta.json")
        if meta_path.exists():
            seed = json.loads(meta_path.read_text()).get("seed")
        return cls(X, y, P, P * X, seed)


def sample_dataset(problem: LinearProblem, mask: MaskModel, n: int, seed: int | None) -> Dataset:
    """Draw ``n`` i.i.d. rows ``(X, y)`` and their missingness pattern ``P``."""
    if n < 1:
        raise ValueError("n must be positive")
    if mask.dim != problem.dim:
        raise ValueError("mask and problem dimensions differ")
    rng = np.random.default_rng(seed)
    X, y = problem.sample(n, rng)
    P = mask.sample(n, rng, X)
    return Dataset(X, y, P, P * X, seed, problem, mask)
