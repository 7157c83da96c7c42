"""Randomized property checks over the library, with observed margins.

Every property returns a margin: the smallest slack observed across its
instances, positive when the property holds.  ``corrupt=True`` zeroes the
tolerance and shrinks the upper penalty levels so that exact bounds are
violated; it exists to show the suite can fail.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from zeroimp.masking import MaskModel, exact_mask_stats, mc_mask_stats
from zeroimp.model import CovarianceSpec, LinearProblem, build_lowrank_problem, build_spiked_problem
from zeroimp.regress import SgdConfig, fit_averaged_sgd, fit_ridge, loo_errors
from zeroimp.theory import (
    bound_bundle,
    example_bound,
    gaussian_mis_bayes_risk,
    imputation_bias,
    imputed_risk,
    imputed_risk_decomposed,
    ridge_bias,
)

SUITES = ("theory", "masking", "regress")


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    margin: float
    instances: int
    detail: str = ""


@dataclass
class VerificationReport:
    suite: str
    seeds: int
    corrupt: bool
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "seeds": self.seeds,
            "corrupt": self.corrupt,
            "passed": self.passed,
            "results": [asdict(r) for r in self.results],
        }


@dataclass(frozen=True)
class _Ctx:
    seeds: int
    master: int
    tol_scale: float
    penalty_scale: float

    def rngs(self, tag: int):
        for s in range(self.seeds):
            yield s, np.random.default_rng([self.master, tag, s])


def _random_problem(rng: np.random.Generator, d_max: int = 30) -> LinearProblem:
    d = int(rng.integers(2, d_max + 1))
    choice = rng.integers(3)
    if choice == 0:
        r = int(rng.integers(1, d + 1))
        return build_lowrank_problem(d, r, sigma2=float(rng.uniform(0, 2)), seed=int(rng.integers(2**63)))
    if choice == 1:
        B = rng.standard_normal((d, d)) * rng.uniform(0.1, 2.0, d)
        return LinearProblem(CovarianceSpec.explicit(B @ B.T / d), rng.standard_normal(d), float(rng.uniform(0, 1)))
    mu = rng.standard_normal(d)
    r = int(rng.integers(1, d + 1))
    return build_lowrank_problem(d, r, mu=mu, sigma2=1.0, seed=int(rng.integers(2**63)))


def _random_mcar(rng: np.random.Generator, d: int) -> MaskModel:
    kind = rng.integers(3)
    if kind == 0:
        return MaskModel.ho_mcar(d, float(rng.uniform(0.1, 1.0)))
    if kind == 1:
        return MaskModel.without_replacement(d, int(rng.integers(0, d)))
    divisors = [k for k in range(1, min(d, 4) + 1) if d % k == 0]
    return MaskModel.random_block_mcar(d, int(rng.choice(divisors)), rng)


def _stats(problem: LinearProblem, mask: MaskModel):
    L2 = float(np.max(np.diag(problem.second_moment())))
    return exact_mask_stats(mask, L2)


# theory ---------------------------------------------------------------------


def _prop_risk_identity(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(1):
        problem = _random_problem(rng)
        mask = _random_mcar(rng, problem.dim)
        stats = _stats(problem, mask)
        theta = rng.standard_normal(problem.dim)
        a = imputed_risk(problem, stats, theta)
        b = imputed_risk_decomposed(problem, stats, theta)
        worst = min(worst, 1e-10 - abs(a - b) / max(1.0, abs(a)))
    return worst, ctx.seeds, "closed form vs risk-plus-variance decomposition, relative"


def _prop_sandwich(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(2):
        problem = _random_problem(rng, 40)
        mask = MaskModel.ho_mcar(problem.dim, float(rng.choice([0.3, 0.5, 0.8])))
        rep = bound_bundle(
            problem, mask, _stats(problem, mask), tol_scale=ctx.tol_scale, upper_penalty_scale=ctx.penalty_scale
        )
        worst = min(
            worst,
            rep.B_imp - rep.B_ridge_lambda_prime + rep.eps_tol,
            rep.B_ridge_lambda - rep.B_imp + rep.eps_tol,
        )
    return worst, ctx.seeds, "B_ridge(lambda') <= B_imp <= B_ridge(lambda) under Ho-MCAR"


def _prop_norm_and_floor(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(3):
        problem = _random_problem(rng, 40)
        mask = MaskModel.ho_mcar(problem.dim, float(rng.uniform(0.2, 0.95)))
        rep = bound_bundle(problem, mask, _stats(problem, mask), tol_scale=ctx.tol_scale)
        if rep.norm_bound is not None:
            worst = min(worst, rep.norm_bound - rep.theta_imp_norm2 + rep.eps_tol)
        worst = min(worst, rep.lambda_min_sigma_imp - rep.sigma_imp_floor + rep.eps_tol)
    return worst, ctx.seeds, "||theta_imp||^2 bound and lambda_min(Sigma_imp) floor"


def _prop_mcar_bound(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(4):
        problem = _random_problem(rng, 24)
        mask = _random_mcar(rng, problem.dim)
        rep = bound_bundle(
            problem, mask, _stats(problem, mask), tol_scale=ctx.tol_scale, upper_penalty_scale=ctx.penalty_scale
        )
        worst = min(worst, rep.B_ridge_Lambda - rep.B_imp + rep.eps_tol)
    return worst, ctx.seeds, "B_imp <= B_ridge(Lambda_imp) for correlated MCAR"


def _prop_rho_one(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(5):
        problem = _random_problem(rng)
        stats = _stats(problem, MaskModel.ho_mcar(problem.dim, 1.0))
        worst = min(worst, 1e-9 - abs(imputation_bias(problem, stats)))
    return worst, ctx.seeds, "no missing values: zero imputation bias"


def _prop_monotone_rho(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(6):
        problem = _random_problem(rng, 20)
        rhos = np.sort(rng.uniform(0.05, 1.0, 4))
        biases = [imputation_bias(problem, _stats(problem, MaskModel.ho_mcar(problem.dim, r))) for r in rhos]
        slack = 1e-9 * (1 + max(biases))
        worst = min(worst, min(biases[i] - biases[i + 1] + slack for i in range(3)))
    return worst, ctx.seeds, "B_imp non-increasing in rho"


def _prop_ridge_bias_monotone(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(7):
        problem = _random_problem(rng)
        lams = np.sort(rng.uniform(0, 10, 5))
        b = [ridge_bias(problem, lam) for lam in lams]
        worst = min(worst, min(b[i + 1] - b[i] + 1e-12 for i in range(4)))
        worst = min(worst, problem.signal_norm2() - b[-1] + 1e-12)
    return worst, ctx.seeds, "B_ridge non-decreasing and below ||theta*||^2_Sigma"


def _prop_lemma_chain(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(8):
        d = int(rng.integers(2, 9))
        B = rng.standard_normal((d, d))
        problem = LinearProblem(CovarianceSpec.explicit(B @ B.T / d), rng.standard_normal(d), float(rng.uniform(0, 1)))
        mask = _random_mcar(rng, d)
        stats = _stats(problem, mask)
        r_mis, _ = gaussian_mis_bayes_risk(problem, mask)
        b_imp = imputation_bias(problem, stats)
        r_imp = problem.sigma2 + b_imp
        eps = ctx.tol_scale * (1 + abs(b_imp))
        worst = min(worst, r_mis - problem.sigma2 + eps, r_imp - r_mis + eps, b_imp - (r_imp - r_mis) + eps)
    return worst, ctx.seeds, "sigma^2 <= R*_mis <= R*_imp, gap <= B_imp"


def _prop_hadamard(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(9):
        d = int(rng.integers(1, 12))
        G = [rng.standard_normal((d, d)) for _ in range(3)]
        A, D, V = (g @ g.T for g in G)
        B = A + D
        theta = rng.standard_normal(d)
        scale = 1e-10 * (1 + np.abs(B).max() * np.abs(V).max())
        # monotonicity A <= B  =>  A * V <= B * V, then the diagonal norm bound
        worst = min(
            worst,
            float(np.linalg.eigvalsh((B - A) * V)[0]) + scale,
            float(np.linalg.eigvalsh(B)[-1] * (theta**2 @ np.diag(A)) - theta @ (A * B) @ theta) + scale,
        )
    return worst, ctx.seeds, "Hadamard monotonicity and lambda_max(B) ||theta||^2_diag(A) bound"


def _prop_rho_limit(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(12):
        problem = _random_problem(rng, 15)
        naive = problem.signal_norm2()
        b = imputation_bias(problem, _stats(problem, MaskModel.ho_mcar(problem.dim, 1e-6)))
        worst = min(worst, 1e-3 * (1 + naive) - abs(naive - b))
    return worst, ctx.seeds, "B_imp approaches ||theta*||^2_Sigma as rho -> 0"


def _prop_example_lowrank(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(10):
        d = int(rng.integers(3, 40))
        r = int(rng.integers(1, d + 1))
        cov = CovarianceSpec.lowrank_equal(d, r, seed=int(rng.integers(2**63)))
        problem = LinearProblem(cov, rng.standard_normal(d), 1.0)
        stats = _stats(problem, MaskModel.ho_mcar(d, float(rng.uniform(0.1, 1.0))))
        b = imputation_bias(problem, stats)
        worst = min(worst, example_bound(problem, stats, "lowrank_equal") - b + ctx.tol_scale * (1 + b))
    return worst, ctx.seeds, "low-rank equal-spectrum example bound"


def _prop_example_spiked(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(11):
        half = int(rng.integers(3, 20))
        r = int(rng.integers(1, half + 1))
        low = CovarianceSpec.lowrank_equal(half, r, seed=int(rng.integers(2**63)))
        eta = float(rng.uniform(0.0, 0.2))
        problem = LinearProblem(CovarianceSpec.spiked(low, eta, half), rng.standard_normal(2 * half), 1.0)
        stats = _stats(problem, MaskModel.ho_mcar(2 * half, float(rng.uniform(0.2, 1.0))))
        b = imputation_bias(problem, stats)
        worst = min(worst, example_bound(problem, stats, "spiked") - b + ctx.tol_scale * (1 + b))
    return worst, ctx.seeds, "spiked example bound"


# masking --------------------------------------------------------------------


def _prop_mc_matches_exact(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    n = 0
    for s, rng in ctx.rngs(20):
        if s >= 5:
            break
        d = int(rng.choice([4, 6]))
        for mask in (
            MaskModel.ho_mcar(d, float(rng.uniform(0.2, 0.9))),
            MaskModel.without_replacement(d, int(rng.integers(0, d))),
            MaskModel.random_block_mcar(d, 2, rng),
        ):
            ex = exact_mask_stats(mask)
            mc = mc_mask_stats(mask, n_draws=200_000, seed=int(rng.integers(2**63)))
            se = np.maximum(mc.V_se, 1e-12)
            worst = min(worst, float(np.min(5.0 - np.abs(mc.V - ex.V) / se)))
            n += 1
    return worst, n, "Monte Carlo V within 5 SE of the closed form"


def _prop_c_psd(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(21):
        d = int(rng.integers(2, 13))
        st = exact_mask_stats(_random_mcar(rng, d))
        worst = min(worst, float(np.linalg.eigvalsh(st.C)[0]) + 1e-10 * (1 + st.lambda_max_C))
    return worst, ctx.seeds, "C is PSD"


def _prop_homcar_lambda(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(22):
        d = int(rng.integers(1, 30))
        rho = float(rng.uniform(0.05, 1.0))
        st = exact_mask_stats(MaskModel.ho_mcar(d, rho))
        worst = min(worst, 1e-10 - abs(st.lambda_max_C - (1 - rho) / rho))
    return worst, ctx.seeds, "Ho-MCAR lambda_max(C) = (1 - rho)/rho"


def _prop_wr_bound(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    n = 0
    for d in range(2, 41):
        for k in range(0, d):
            st = exact_mask_stats(MaskModel.without_replacement(d, k))
            worst = min(worst, (k + 1) / (d - k) - st.lambda_max_C + 1e-12)
            worst = min(worst, 1e-10 - abs(st.lambda_max_C - k * d / ((d - k) * (d - 1))))
            n += 1
    return worst, n, "without replacement: lambda_max(C) = kd/((d-k)(d-1)) <= (k+1)/(d-k)"


def _prop_block_corr(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(23):
        k = int(rng.integers(1, 5))
        d = k * int(rng.integers(1, 6))
        mask = MaskModel.random_block_mcar(d, k, rng)
        st = exact_mask_stats(mask)
        cap = k * float(np.max((1 - st.rho) / st.rho))
        worst = min(worst, cap - st.lambda_max_C + 1e-10 * (1 + cap))
    return worst, ctx.seeds, "block MCAR: lambda_max(C) <= k max (1 - rho_j)/rho_j"


# regress --------------------------------------------------------------------


def _prop_loo(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(30):
        n = int(rng.integers(5, 40))
        d = int(rng.integers(1, 50))
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        lam = float(10 ** rng.uniform(-3, 1))
        fast, _ = loo_errors(X, y, [lam])
        lam_sub = n * lam / (n - 1)
        brute = np.mean(
            [
                (y[i] - X[i] @ fit_ridge(np.delete(X, i, 0), np.delete(y, i), lam_sub).theta_hat) ** 2
                for i in range(n)
            ]
        )
        worst = min(worst, 1e-8 - abs(fast[0] - brute) / brute)
    return worst, ctx.seeds, "hat-matrix LOO equals brute-force refits, relative"


def _prop_ridge_norm(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(31):
        n, d = int(rng.integers(3, 30)), int(rng.integers(1, 30))
        X, y = rng.standard_normal((n, d)), rng.standard_normal(n)
        lams = np.sort(10 ** rng.uniform(-3, 2, 4))
        norms = [np.linalg.norm(fit_ridge(X, y, lam).theta_hat) for lam in lams]
        worst = min(worst, min(norms[i] - norms[i + 1] + 1e-10 for i in range(3)))
    return worst, ctx.seeds, "ridge norm non-increasing in lambda"


def _prop_sgd_zero_step(ctx: _Ctx) -> tuple[float, int, str]:
    worst = np.inf
    for _, rng in ctx.rngs(32):
        n, d = int(rng.integers(1, 50)), int(rng.integers(1, 10))
        X, y = rng.standard_normal((n, d)), rng.standard_normal(n)
        theta0 = rng.standard_normal(d)
        fit = fit_averaged_sgd(X, y, SgdConfig.fixed(1e-300, theta0))
        worst = min(worst, 1e-12 - float(np.max(np.abs(fit.theta_hat - theta0))))
    return worst, ctx.seeds, "vanishing step returns theta_0"


PROPERTIES: dict[str, list[tuple[str, Callable[[_Ctx], tuple[float, int, str]]]]] = {
    "theory": [
        ("risk_identity", _prop_risk_identity),
        ("sandwich", _prop_sandwich),
        ("norm_and_floor", _prop_norm_and_floor),
        ("mcar_bound", _prop_mcar_bound),
        ("rho_one_zero_bias", _prop_rho_one),
        ("bias_monotone_in_rho", _prop_monotone_rho),
        ("ridge_bias_monotone", _prop_ridge_bias_monotone),
        ("missing_data_chain", _prop_lemma_chain),
        ("hadamard_lemmas", _prop_hadamard),
        ("rho_to_zero_limit", _prop_rho_limit),
        ("example_lowrank_equal", _prop_example_lowrank),
        ("example_spiked", _prop_example_spiked),
    ],
    "masking": [
        ("mc_matches_exact", _prop_mc_matches_exact),
        ("c_psd", _prop_c_psd),
        ("homcar_lambda_max", _prop_homcar_lambda),
        ("without_replacement_bound", _prop_wr_bound),
        ("block_correlation_cap", _prop_block_corr),
    ],
    "regress": [
        ("loo_bruteforce", _prop_loo),
        ("ridge_norm_monotone", _prop_ridge_norm),
        ("sgd_zero_step", _prop_sgd_zero_step),
    ],
}


def run_verification(
    suite: str = "all",
    seeds: int = 20,
    *,
    master_seed: int = 0,
    tol_scale: float = 1e-9,
    corrupt: bool = False,
) -> VerificationReport:
    """Run one suite (or ``"all"``) and collect pass/fail with margins.

    Exceptions inside a property are reported as failures, never raised.
    """
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES + ('all',)}")
    if seeds < 1:
        raise ValueError("seeds must be positive")
    ctx = _Ctx(seeds, master_seed, 0.0 if corrupt else tol_scale, 0.25 if corrupt else 1.0)
    report = VerificationReport(suite, seeds, corrupt)
    for name in SUITES if suite == "all" else (suite,):
        for prop, fn in PROPERTIES[name]:
            try:
                margin, count, detail = fn(ctx)
                report.results.append(PropertyResult(name, prop, bool(margin >= 0), float(margin), count, detail))
            except Exception as exc:  # noqa: BLE001
                report.results.append(
                    PropertyResult(name, prop, False, float("nan"), 0, f"{type(exc).__name__}: {exc}")
                )
    return report
