"""Command-line surface: estimate, balance, simulate.

Configs are single JSON files validated strictly (unknown keys are
rejected, naming the offending key). Every command dual-emits a JSON
report for pipelines and an aligned text table for humans. Exit codes:
0 success/balanced, 1 config or input error, 2 numeric failure,
3 balance rejection.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .balance import DirectionSet, balance_sweep, dcar_residual, default_directions
from .basis import BasisSpec
from .dataset import Dataset, load_csv, scale_response, validate
from .effects import estimate, estimate_ate
from .errors import BalancekitError, ConfigError, DataError
from .nuisance import (
    OutcomeConfig,
    OutcomeModel,
    PropensityConfig,
    fit_outcome,
    fit_propensity,
    truncate,
    undersmooth_select,
)
from .sim import EstimatorSpec, dgp_from_dict, get_dgp, run_monte_carlo

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_REJECTED = 3


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in {where}")


def _jsonify(value):
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _basis_spec_from(cfg: dict, where: str) -> BasisSpec:
    _check_keys(cfg, {"max_interaction_degree", "knot_strategy"}, where)
    strategy = cfg.get("knot_strategy", "all-observed")
    if isinstance(strategy, int):
        strategy = ("quantile", strategy)
    return BasisSpec(
        max_interaction_degree=int(cfg.get("max_interaction_degree", 2)),
        knot_strategy=strategy,
    )


def _propensity_config_from(cfg: dict, seed: int) -> PropensityConfig:
    _check_keys(cfg, {"kind", "selection", "lambda", "n_lambda",
                      "lambda_min_ratio", "basis", "delta", "cv_folds"},
                "propensity")
    return PropensityConfig(
        kind=cfg.get("kind", "parametric-logistic"),
        selection=cfg.get("selection", "cv"),
        basis_spec=_basis_spec_from(cfg.get("basis", {}), "propensity.basis"),
        n_lambda=int(cfg.get("n_lambda", 20)),
        lambda_min_ratio=float(cfg.get("lambda_min_ratio", 1e-4)),
        lambda_fixed=cfg.get("lambda"),
        cv_folds=int(cfg.get("cv_folds", 5)),
        cv_seed=seed,
        delta=float(cfg.get("delta", 0.01)),
    )


def _outcome_config_from(cfg: dict, seed: int) -> OutcomeConfig:
    _check_keys(cfg, {"kind", "arm_specific", "intercept_only", "interactions",
                      "basis", "n_lambda", "lambda_min_ratio", "cv_folds"},
                "outcome")
    return OutcomeConfig(
        kind=cfg.get("kind", "linear"),
        arm_specific=bool(cfg.get("arm_specific", True)),
        intercept_only=bool(cfg.get("intercept_only", False)),
        interactions=bool(cfg.get("interactions", False)),
        basis_spec=_basis_spec_from(cfg.get("basis", {}), "outcome.basis"),
        n_lambda=int(cfg.get("n_lambda", 20)),
        lambda_min_ratio=float(cfg.get("lambda_min_ratio", 1e-4)),
        cv_folds=int(cfg.get("cv_folds", 5)),
        cv_seed=seed + 1,
    )


def _load_dataset(cfg: dict) -> Dataset:
    path = cfg["input"]
    if not Path(path).exists():
        raise ConfigError(f"input file not found: {path}")
    data = load_csv(path, cfg["treatment_col"], cfg["response_col"])
    validate(data)
    return data


def _fit_nuisances(data: Dataset, cfg: dict, seed: int):
    """Outcome first (undersmoothing needs it), then propensity, then truncation.

    Outcome predictions are always mapped back to the original response
    scale before any estimator sees them.
    """
    out_cfg = _outcome_config_from(cfg.get("outcome", {}), seed)
    if out_cfg.kind in ("logistic", "hal-sieve"):
        sdata = scale_response(data)
        lo, hi = sdata.response_bounds
        raw = fit_outcome(sdata, out_cfg)
        outcome = OutcomeModel.from_predictions(
            lo + (hi - lo) * raw.q1, lo + (hi - lo) * raw.q0, kind=raw.kind
        )
    else:
        outcome = fit_outcome(data, out_cfg)
    prop_cfg = _propensity_config_from(cfg.get("propensity", {}), seed)
    prop = fit_propensity(data, prop_cfg)
    if cfg.get("propensity", {}).get("selection") == "undersmoothed":
        prop = undersmooth_select(data, prop, None, outcome)
    prop = truncate(prop, prop_cfg.delta)
    return prop, outcome


def _write(output_dir: str, stem: str, json_text: str, table: str, quiet: bool):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json_text + "\n", encoding="utf-8")
    (out / f"{stem}.txt").write_text(table + "\n", encoding="utf-8")
    if not quiet:
        print(table)
        print(f"wrote {out / (stem + '.json')}")


ESTIMATE_KEYS = {"input", "treatment_col", "response_col", "estimand",
                 "estimators", "propensity", "outcome", "hajek", "seed",
                 "output"}


def run_estimate(cfg: dict, output_dir: str, seed_override, quiet: bool) -> int:
    _check_keys(cfg, ESTIMATE_KEYS, "estimate config")
    for req in ("input", "treatment_col", "response_col"):
        if req not in cfg:
            raise ConfigError(f"missing required key '{req}' in estimate config")
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    data = _load_dataset(cfg)
    estimators = cfg.get("estimators", ["aipw"])
    estimand = cfg.get("estimand", "treated-mean")
    if estimand not in ("treated-mean", "control-mean", "ate"):
        raise ConfigError(f"unknown estimand '{estimand}'")
    try:
        prop, outcome = _fit_nuisances(data, cfg, seed)
        results = {}
        for name in estimators:
            kwargs = {"hajek": bool(cfg.get("hajek", False))} if name == "ipw" else {}
            if estimand == "ate":
                est = estimate_ate(data, name, propensity=prop,
                                   outcome=outcome, **kwargs)
            else:
                arm = 1 if estimand == "treated-mean" else 0
                est = estimate(data, name, propensity=prop, outcome=outcome,
                               arm=arm, **kwargs)
            results[name] = {
                "point": est.point,
                "se": est.se,
                "ci_95": list(est.ci_95),
                "diagnostics": _jsonify(est.diagnostics),
                "eif_mean": float(np.mean(est.if_values)),
                "dcar_residual": dcar_residual(data, prop, outcome),
            }
    except ConfigError:
        raise
    except BalancekitError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {
        "version": 1,
        "command": "estimate",
        "input": cfg["input"],
        "estimand": estimand,
        "n": data.n,
        "p": data.p,
        "propensity": {"kind": prop.kind, "selection": prop.selection,
                       "lambda": prop.lambda_selected,
                       "truncation_delta": prop.truncation_delta,
                       "clamp_count": prop.clamp_count},
        "estimators": results,
    }
    width = max(len(n) for n in results)
    lines = [f"{'estimator':<{width}}  {'point':>12}  {'se':>10}  {'ci_95':>26}"]
    for name, rec in results.items():
        lo, hi = rec["ci_95"]
        lines.append(f"{name:<{width}}  {rec['point']:>12.6g}  {rec['se']:>10.4g}  "
                     f"[{lo:>11.6g}, {hi:>11.6g}]")
    _write(output_dir, "estimate_report",
           json.dumps(report, indent=2, sort_keys=True), "\n".join(lines), quiet)
    return EXIT_OK


BALANCE_KEYS = {"input", "treatment_col", "response_col", "propensity",
                "outcome", "directions", "alpha", "seed", "output"}


def run_balance(cfg: dict, output_dir: str, seed_override, quiet: bool) -> int:
    _check_keys(cfg, BALANCE_KEYS, "balance config")
    for req in ("input", "treatment_col", "response_col"):
        if req not in cfg:
            raise ConfigError(f"missing required key '{req}' in balance config")
    dir_cfg = cfg.get("directions", {})
    _check_keys(dir_cfg, {"covariates", "basis", "eif_weight", "center",
                          "user_columns"}, "directions")
    alpha = float(cfg.get("alpha", 0.05))
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    data = _load_dataset(cfg)
    try:
        prop, outcome = _fit_nuisances(data, cfg, seed)
        named = {}
        X = data.covariates
        if dir_cfg.get("covariates", True):
            mu = X.mean(axis=0) if dir_cfg.get("center", False) else np.zeros(data.p)
            for j, name in enumerate(data.covariate_names):
                named[name] = X[:, j] - mu[j]
        if dir_cfg.get("basis", True) and prop.basis is not None:
            for j, (subset, knots) in enumerate(prop.basis.terms):
                if len(subset) == 1:
                    named[f"basis_x{subset[0] + 1}_ge_{knots[0]:g}"] = \
                        prop.basis.design[:, j + 1]
        if dir_cfg.get("eif_weight", True):
            named["eif_weight"] = outcome.q1 / prop.fitted_scores
        for col in dir_cfg.get("user_columns", []):
            if col not in data.covariate_names:
                raise ConfigError(f"user direction column '{col}' not in data")
            named[f"user_{col}"] = X[:, data.covariate_names.index(col)]
        dirs = DirectionSet.from_columns(named)
        report = balance_sweep(data, prop, dirs, alpha)
    except ConfigError:
        raise
    except BalancekitError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    payload = report.to_dict()
    payload.update({"version": 1, "command": "balance", "input": cfg["input"],
                    "n": data.n})
    _write(output_dir, "balance_report",
           json.dumps(payload, indent=2, sort_keys=True), report.to_text(), quiet)
    if report.family_decision == "rejected":
        if not quiet:
            print(f"balance rejected: {', '.join(report.rejected)}")
        return EXIT_REJECTED
    return EXIT_OK


SIMULATE_KEYS = {"dgp", "n", "reps", "seed", "estimators", "workers", "output"}


def run_simulate(cfg: dict, output_dir: str, seed_override, quiet: bool) -> int:
    _check_keys(cfg, SIMULATE_KEYS, "simulate config")
    for req in ("dgp", "n", "reps", "estimators"):
        if req not in cfg:
            raise ConfigError(f"missing required key '{req}' in simulate config")
    dgp_cfg = cfg["dgp"]
    dgp = get_dgp(dgp_cfg) if isinstance(dgp_cfg, str) else dgp_from_dict(dgp_cfg)
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    specs = [EstimatorSpec.from_dict(s) for s in cfg["estimators"]]
    workers = int(cfg.get("workers", 1))
    env_cap = os.environ.get("BALANCEKIT_THREADS")
    if env_cap is not None:
        workers = max(1, min(workers, int(env_cap)))
    try:
        result = run_monte_carlo(dgp, int(cfg["n"]), int(cfg["reps"]), specs,
                                 seed, n_workers=workers)
    except BalancekitError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "simulate_draws.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "replication", "point", "se",
                        "ci_lower", "ci_upper"])
        for name, rows in result.draws.items():
            for i, rec in enumerate(rows):
                writer.writerow([name, i, repr(rec["point"]), repr(rec["se"]),
                                 repr(rec["ci"][0]), repr(rec["ci"][1])])
    payload = result.to_dict()
    payload.update({"version": 1, "command": "simulate"})
    lines = [f"dgp={result.dgp_name} n={result.n} reps={result.reps} "
             f"tau0={result.tau0:g} bound={result.eff_bound:g} "
             f"failures={result.n_failures}"]
    def _fmt(value, spec):
        return "NA" if value is None else format(value, spec)

    for name, stats in result.estimators.items():
        lines.append(
            f"{name}: bias={_fmt(stats['mean_bias'], '.5g')} "
            f"n*var={_fmt(stats['n_times_variance'], '.5g')} "
            f"coverage={_fmt(stats['coverage_95'], '.3f')}"
        )
    _write(output_dir, "simulate_report",
           json.dumps(_jsonify(payload), indent=2, sort_keys=True),
           "\n".join(lines), quiet)
    if result.failed:
        print(f"failure rate {result.failure_rate:.1%} exceeds 5%", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="balancekit",
        description="Counterfactual-mean estimation and balance diagnostics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("estimate", "balance", "simulate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--output", default=".")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    output_dir = cfg.get("output", args.output) if args.output == "." \
        else args.output
    runner = {"estimate": run_estimate, "balance": run_balance,
              "simulate": run_simulate}[args.command]
    try:
        return runner(cfg, output_dir, args.seed, args.quiet)
    except (ConfigError, DataError) as exc:
        print(f"config/input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
