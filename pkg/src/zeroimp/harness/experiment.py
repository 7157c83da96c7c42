"""Excess-risk sweeps over the input dimension.

One *cell* is a ``(d, repetition)`` pair: a fresh problem, a training set,
a test set, and every requested method fitted on the same data.  Cells are
independent and seeded from ``(master_seed, d, repetition)``, so results
do not depend on how cells are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from zeroimp.impute import IterativeConditionalImputer, fit_optimal_constant, impute_zero
from zeroimp.masking import MaskModel, calibrate_self_masking
from zeroimp.model import LinearProblem, build_lowrank_problem, build_spiked_problem, sample_dataset
from zeroimp.regress import SgdConfig, fit_averaged_sgd, fit_pattern_by_pattern, fit_ridge_loo, predict

METHODS = ("zero+sgd", "zero+ridge-loo", "opti", "ice+sgd", "ice+ridge-loo", "pattern")
MODELS = ("lowrank", "spiked")
MASKS = ("ho-mcar", "self-masking", "without-replacement")
DEFAULT_D_GRID = (10, 20, 50, 100, 200, 300, 500)

SCHEMA = "zeroimp-results/1"
COLUMNS = (
    "experiment_id",
    "model",
    "mask",
    "d",
    "n",
    "method",
    "repetition",
    "seed",
    "excess_risk",
    "se",
    "error",
)


@dataclass(frozen=True)
class ExperimentSpec:
    model: str = "lowrank"
    mask: str = "ho-mcar"
    d_grid: tuple[int, ...] = DEFAULT_D_GRID
    n: int = 500
    r: int = 5
    rho: float = 0.5
    repetitions: int = 10
    test_size: int = 10_000
    methods: tuple[str, ...] = ("zero+sgd", "zero+ridge-loo", "opti", "ice+sgd", "ice+ridge-loo", "pattern")
    master_seed: int = 0
    sigma2: float = 2.0
    theta_tail_norm: float = 0.2
    eta: float = 1.0
    alpha_scale: float = 1.0
    ice_rounds: int = 10
    ice_ridge: float = 1e-3
    sgd_rule: str = "trace"
    kappa: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "d_grid", tuple(int(d) for d in self.d_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.mask not in MASKS:
            raise ValueError(f"mask must be one of {MASKS}, got {self.mask!r}")
        if not self.d_grid:
            raise ValueError("d_grid is empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.model == "spiked" and any(d % 2 for d in self.d_grid):
            raise ValueError("spiked model needs even dimensions")
        low_dims = [d // 2 if self.model == "spiked" else d for d in self.d_grid]
        if min(low_dims) < self.r:
            raise ValueError(f"every (low-rank block) dimension must be >= r={self.r}")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.n < 1 or self.test_size < 1 or self.repetitions < 1:
            raise ValueError("n, test_size and repetitions must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentSpec:
        data = {k.replace("-", "_"): v for k, v in data.items()}
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown experiment keys {sorted(extra)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["d_grid"] = list(self.d_grid)
        out["methods"] = list(self.methods)
        return out

    def experiment_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ResultRow:
    experiment_id: str
    model: str
    mask: str
    d: int
    n: int
    method: str
    repetition: int
    seed: int
    excess_risk: float
    se: float
    error: str = ""
    wall_time: float = field(default=0.0, compare=False)

    def csv_fields(self) -> list[str]:
        return [
            self.experiment_id,
            self.model,
            self.mask,
            str(self.d),
            str(self.n),
            self.method,
            str(self.repetition),
            str(self.seed),
            repr(float(self.excess_risk)),
            repr(float(self.se)),
            self.error,
        ]


def cell_seed(master: int, d: int, repetition: int) -> int:
    return int(np.random.SeedSequence([master, d, repetition]).generate_state(1)[0])


def _beta_seed(master: int, repetition: int) -> int:
    # shared across d: same signal strength along the sweep
    return int(np.random.SeedSequence([master, 0xBE7A, repetition]).generate_state(1)[0])


def make_problem(spec: ExperimentSpec, d: int, repetition: int) -> LinearProblem:
    rng = np.random.default_rng(cell_seed(spec.master_seed, d, repetition))
    beta = np.random.default_rng(_beta_seed(spec.master_seed, repetition)).standard_normal(spec.r)
    seed = int(rng.integers(2**63))
    if spec.model == "lowrank":
        return build_lowrank_problem(d, spec.r, beta=beta, sigma2=spec.sigma2, seed=seed)
    return build_spiked_problem(
        d, spec.r, spec.theta_tail_norm, spec.eta, seed, sigma2=spec.sigma2, beta=beta
    )


def make_mask(spec: ExperimentSpec, problem: LinearProblem) -> MaskModel:
    d = problem.dim
    if spec.mask == "ho-mcar":
        return MaskModel.ho_mcar(d, spec.rho)
    if spec.mask == "without-replacement":
        return MaskModel.without_replacement(d, min(d - 1, int(round((1 - spec.rho) * d))))
    return calibrate_self_masking(problem, spec.alpha_scale, spec.rho)


def _sgd_config(spec: ExperimentSpec) -> SgdConfig:
    return SgdConfig(spec.sgd_rule, kappa=spec.kappa)


def _run_cell(spec: ExperimentSpec, d: int, repetition: int) -> list[ResultRow]:
    seed = cell_seed(spec.master_seed, d, repetition)
    exp_id = spec.experiment_id()

    def row(method: str, risk: float, se: float, error: str = "", wall: float = 0.0) -> ResultRow:
        return ResultRow(exp_id, spec.model, spec.mask, d, spec.n, method, repetition, seed, risk, se, error, wall)

    with threadpool_limits(1):
        try:
            problem = make_problem(spec, d, repetition)
            mask = make_mask(spec, problem)
            rng = np.random.default_rng(seed)
            train = sample_dataset(problem, mask, spec.n, int(rng.integers(2**63)))
            test = sample_dataset(problem, mask, spec.test_size, int(rng.integers(2**63)))
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            msg = f"{type(exc).__name__}: {exc}"
            return [row(m, float("nan"), float("nan"), msg) for m in spec.methods]

        cache: dict[str, Any] = {}

        def ice() -> tuple[np.ndarray, np.ndarray]:
            if "ice" not in cache:
                imp = IterativeConditionalImputer(spec.ice_rounds, spec.ice_ridge)
                cache["ice"] = (imp.fit_transform(train.X, train.P), imp.transform(test.X, test.P))
            return cache["ice"]

        def zero() -> tuple[np.ndarray, np.ndarray]:
            return impute_zero(train.X, train.P), impute_zero(test.X, test.P)

        rows = []
        for method in spec.methods:
            start = time.perf_counter()
            try:
                if method == "opti":
                    pred = fit_optimal_constant(train.X, train.P, train.y).predict(test.X, test.P)
                elif method == "pattern":
                    fit = fit_pattern_by_pattern(train.X, train.P, train.y)
                    pred = predict(fit, test.X, test.P)
                else:
                    imputer, regressor = method.split("+")
                    Xtr, Xte = zero() if imputer == "zero" else ice()
                    if regressor == "sgd":
                        fit = fit_averaged_sgd(Xtr, train.y, _sgd_config(spec))
                    else:
                        fit = fit_ridge_loo(Xtr, train.y)
                    pred = predict(fit, Xte)
                sq = (test.y - pred) ** 2
                risk = float(sq.mean() - problem.sigma2)
                se = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else float("nan")
                if not np.isfinite(risk):
                    raise FloatingPointError("non-finite excess risk")
                rows.append(row(method, risk, se, wall=time.perf_counter() - start))
            except Exception as exc:  # noqa: BLE001
                rows.append(
                    row(method, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}", time.perf_counter() - start)
                )
        return rows


def _run_cell_args(args: tuple[ExperimentSpec, int, int]) -> list[ResultRow]:
    return _run_cell(*args)


def run_experiment(
    spec: ExperimentSpec, workers: int = 1, out: str | Path | None = None
) -> list[ResultRow]:
    """Run every ``(d, repetition)`` cell and return rows in ``(d, method, repetition)`` order.

    With ``out`` set, the rows are written as CSV and per-row wall times go to
    a ``.timing.csv`` sidecar (kept out of the main file so that it is
    byte-reproducible).
    """
    cells = [(spec, d, rep) for d in spec.d_grid for rep in range(spec.repetitions)]
    rows: list[ResultRow] = []
    if spec.methods:
        if workers <= 1:
            for cell in cells:
                rows.extend(_run_cell_args(cell))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for chunk in pool.map(_run_cell_args, cells):
                    rows.extend(chunk)
    order = {m: i for i, m in enumerate(spec.methods)}
    grid_pos = {d: i for i, d in enumerate(spec.d_grid)}
    rows.sort(key=lambda r: (grid_pos[r.d], order[r.method], r.repetition))
    if out is not None:
        write_results(rows, out, spec)
    return rows


def results_csv_text(rows: Sequence[ResultRow], spec: ExperimentSpec | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}")
    if spec is not None:
        buf.write(f" experiment_id={spec.experiment_id()}")
    buf.write("\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow(r.csv_fields())
    return buf.getvalue()


def write_results(rows: Sequence[ResultRow], path: str | Path, spec: ExperimentSpec | None = None) -> Path:
    path = Path(path)
    path.write_text(results_csv_text(rows, spec))
    timing = path.with_suffix(".timing.csv")
    with open(timing, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["d", "method", "repetition", "wall_time"])
        for r in rows:
            writer.writerow([r.d, r.method, r.repetition, f"{r.wall_time:.6f}"])
    if spec is not None:
        path.with_suffix(".spec.json").write_text(
            json.dumps(
                {
                    **spec.to_dict(),
                    "experiment_id": spec.experiment_id(),
                    "factor_resampled_per_repetition": True,
                    "opti_mode": "augmented-model-end-to-end",
                },
                indent=2,
            )
        )
    return path


def read_results(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rows.append(
            ResultRow(
                rec["experiment_id"],
                rec["model"],
                rec["mask"],
                int(rec["d"]),
                int(rec["n"]),
                rec["method"],
                int(rec["repetition"]),
                int(rec["seed"]),
                float(rec["excess_risk"]),
                float(rec["se"]),
                rec["error"],
            )
        )
    return rows


def median_by(rows: Sequence[ResultRow]) -> dict[tuple[int, str], float]:
    """Median excess risk per ``(d, method)`` over error-free repetitions."""
    groups: dict[tuple[int, str], list[float]] = {}
    for r in rows:
        if not r.error:
            groups.setdefault((r.d, r.method), []).append(r.excess_risk)
    return {k: float(np.median(v)) for k, v in groups.items()}
