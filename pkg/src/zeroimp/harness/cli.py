"""Command line entry point: ``zeroimp <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from zeroimp.harness.experiment import DEFAULT_D_GRID, METHODS, ExperimentSpec, run_experiment
from zeroimp.harness.summarize import MalformedResults, summarize, summary_csv_text
from zeroimp.harness.verify import SUITES, run_verification
from zeroimp.impute import fit_optimal_constant, make_imputer
from zeroimp.masking import MaskModel, calibrate_self_masking, exact_mask_stats
from zeroimp.model import Dataset, build_lowrank_problem, build_spiked_problem, sample_dataset
from zeroimp.regress import SgdConfig, fit_averaged_sgd, fit_pattern_by_pattern, fit_ridge, fit_ridge_loo
from zeroimp.theory import bound_bundle

log = logging.getLogger("zeroimp")


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"config {path}: expected a mapping at the top level")
    return data


def _emit(payload: Any, out: str | None) -> None:
    text = json.dumps(payload, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _problem(args: argparse.Namespace):
    if args.model == "spiked":
        return build_spiked_problem(args.d, args.r, args.tail_norm, args.eta, args.seed, sigma2=args.sigma2)
    return build_lowrank_problem(args.d, args.r, sigma2=args.sigma2, seed=args.seed)


def _mask(args: argparse.Namespace, problem):
    d = problem.dim
    if args.mask == "ho-mcar":
        return MaskModel.ho_mcar(d, args.rho)
    if args.mask == "without-replacement":
        k = args.k if args.k is not None else int(round((1 - args.rho) * d))
        return MaskModel.without_replacement(d, k)
    if args.mask == "block":
        return MaskModel.block_mcar(d, args.k or 1, args.rho)
    return calibrate_self_masking(problem, args.alpha_scale, args.rho)


def _add_problem_args(p: argparse.ArgumentParser, masks: Sequence[str]) -> None:
    p.add_argument("--model", choices=("lowrank", "spiked"), default="lowrank")
    p.add_argument("--mask", choices=masks, default="ho-mcar")
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--r", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.5, help="observation rate (target rate for self-masking)")
    p.add_argument("--k", type=int, default=None, help="missing count (without-replacement) or block size")
    p.add_argument("--sigma2", type=float, default=2.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--tail-norm", type=float, default=0.2)
    p.add_argument("--alpha-scale", type=float, default=1.0)


def cmd_gen(args: argparse.Namespace) -> int:
    problem = _problem(args)
    mask = _mask(args, problem)
    data = sample_dataset(problem, mask, args.n, args.seed)
    out = args.out or "data.csv"
    data.to_csv(out)
    log.info("wrote %d rows to %s", data.n, out)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    data = Dataset.from_csv(args.data)
    X, P, y = data.X, data.P, data.y
    if args.method == "opti":
        model = fit_optimal_constant(X, P, y)
        payload = {"method": "opti", "coef": model.coef_.tolist(), "constants": model.constants_.tolist()}
    elif args.method == "pattern":
        fit = fit_pattern_by_pattern(X, P, y)
        payload = {
            "method": "pattern",
            "patterns": {"".join(map(str, np.frombuffer(k, np.int8))): v.tolist() for k, v in fit.coefs.items()},
        }
    else:
        X_imp = make_imputer(args.imputer, args.ice_rounds, args.ice_ridge).fit_transform(X, P)
        if args.method == "sgd":
            cfg = SgdConfig.fixed(args.gamma) if args.gamma else SgdConfig(args.step_rule)
            fit = fit_averaged_sgd(X_imp, y, cfg)
        elif args.method == "ridge":
            fit = fit_ridge(X_imp, y, args.lam)
        else:
            grid = [float(v) for v in args.lambda_grid.split(",")] if args.lambda_grid else None
            fit = fit_ridge_loo(X_imp, y, grid)
        payload = {
            "method": f"{args.imputer}+{fit.method}",
            "hyperparameter": fit.hyperparameter,
            "theta_hat": fit.theta_hat.tolist(),
        }
    _emit(payload, args.out)
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    problem = _problem(args)
    mask = _mask(args, problem)
    L2 = float(np.max(np.diag(problem.second_moment())))
    report = bound_bundle(problem, mask, exact_mask_stats(mask, L2))
    _emit(report.to_dict(), args.out)
    if args.check and not report.all_ok:
        return 1
    return 0


def _experiment_spec(args: argparse.Namespace, config: dict[str, Any]) -> ExperimentSpec:
    data = dict(config.get("experiment", config))
    overrides = {
        "model": args.model,
        "mask": args.mask,
        "d_grid": [int(v) for v in args.d_grid.split(",")] if args.d_grid else None,
        "methods": args.methods.split(",") if args.methods else None,
        "repetitions": args.repetitions,
        "n": args.n,
        "r": args.r,
        "rho": args.rho,
        "test_size": args.test_size,
        "ice_rounds": args.ice_rounds,
        "ice_ridge": args.ice_ridge,
        "sgd_rule": args.step_rule,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        data["master_seed"] = args.seed
    return ExperimentSpec.from_dict(data)


def cmd_experiment(args: argparse.Namespace, config: dict[str, Any]) -> int:
    spec = _experiment_spec(args, config)
    out = args.out or "results.csv"
    rows = run_experiment(spec, workers=args.workers, out=out)
    errors = sum(1 for r in rows if r.error)
    log.info("wrote %d rows (%d with errors) to %s", len(rows), errors, out)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_verification(
        args.suite, args.seeds, master_seed=args.seed or 0, tol_scale=args.tol_scale, corrupt=args.corrupt
    )
    _emit(report.to_dict(), args.out)
    return report.exit_code


def cmd_summarize(args: argparse.Namespace) -> int:
    try:
        rows = summarize(args.results, args.confidence)
    except MalformedResults as exc:
        for lineno, msg in exc.problems:
            print(f"{args.results}:{lineno}: {msg}", file=sys.stderr)
        return 2
    text = summary_csv_text(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--config", default=default, help="YAML file mirroring the experiment fields")
    p.add_argument("--out", default=default, help="output path")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS if suppress else 1)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroimp", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a masked dataset to CSV")
    _global_flags(p, suppress=True)
    _add_problem_args(p, ("ho-mcar", "without-replacement", "block", "self-masking"))
    p.add_argument("--n", type=int, default=500)

    p = sub.add_parser("fit", help="fit one estimator to a dataset CSV")
    _global_flags(p, suppress=True)
    p.add_argument("data")
    p.add_argument("--method", choices=("sgd", "ridge", "ridge-loo", "opti", "pattern"), default="ridge-loo")
    p.add_argument("--imputer", choices=("zero", "ice"), default="zero")
    p.add_argument("--ice-rounds", type=int, default=10)
    p.add_argument("--ice-ridge", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=None, help="fixed SGD step (overrides --step-rule)")
    p.add_argument("--step-rule", choices=("dim", "trace"), default="dim")
    p.add_argument("--lam", type=float, default=0.0, help="penalty for --method ridge")
    p.add_argument("--lambda-grid", default=None, help="comma-separated LOO grid")

    p = sub.add_parser("theory", help="imputation bias and ridge-bias bounds for an MCAR instance")
    _global_flags(p, suppress=True)
    _add_problem_args(p, ("ho-mcar", "without-replacement", "block"))
    p.add_argument("--check", action="store_true", help="exit 1 when a bound is violated")

    p = sub.add_parser("experiment", help="excess-risk sweep over d")
    _global_flags(p, suppress=True)
    p.add_argument("--model", choices=("lowrank", "spiked"), default=None)
    p.add_argument("--mask", choices=("ho-mcar", "self-masking", "without-replacement"), default=None)
    p.add_argument("--d-grid", default=None, help=f"comma-separated (default {','.join(map(str, DEFAULT_D_GRID))})")
    p.add_argument("--methods", default=None, help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--test-size", type=int, default=None)
    p.add_argument("--ice-rounds", type=int, default=None)
    p.add_argument("--ice-ridge", type=float, default=None)
    p.add_argument("--step-rule", choices=("dim", "trace"), default=None)

    p = sub.add_parser("verify", help="randomized property suite")
    _global_flags(p, suppress=True)
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol-scale", type=float, default=1e-9)
    p.add_argument("--corrupt", action="store_true", help="negative control: zero tolerance, shrunken penalties")

    p = sub.add_parser("summarize", help="mean, SE and CI per (d, method)")
    _global_flags(p, suppress=True)
    p.add_argument("results")
    p.add_argument("--confidence", type=float, default=0.95)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    config = _load_config(args.config)
    if args.command == "experiment":
        return cmd_experiment(args, config)
    handlers = {
        "gen": cmd_gen,
        "fit": cmd_fit,
        "theory": cmd_theory,
        "verify": cmd_verify,
        "summarize": cmd_summarize,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
