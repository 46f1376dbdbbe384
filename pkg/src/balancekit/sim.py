"""Synthetic data-generating processes and the Monte Carlo harness.

DGPs are declarative (covariate families plus term lists for the true
treatment mechanism and response mean) so that the same structure
serializes to the CLI config format. Replications derive independent
substreams from (root seed, replication index), so any single
replication is reproducible in isolation.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .balance import dcar_residual
from .basis import BasisSpec
from .dataset import Dataset, scale_response
from .effects import estimate
from .errors import BalancekitError, DataError
from .glm import fit_logistic
from .nuisance import (
    OutcomeConfig,
    OutcomeModel,
    PropensityConfig,
    PropensityModel,
    fit_outcome,
    fit_propensity,
    truncate,
    undersmooth_select,
)

TRUTH_DRAWS = 1_000_000
TRUTH_SEED = 909
MAX_FAILURE_RATE = 0.05

_TERM_FNS = {
    "identity": lambda x: x,
    "square": lambda x: x * x,
    "sin2pi": lambda x: np.sin(2.0 * np.pi * x),
    "cos2pi": lambda x: np.cos(2.0 * np.pi * x),
}


@dataclass(frozen=True)
class Dgp:
    """Declarative data-generating process.

    covariates: sequence of {"name", "family", ...params}, families
    uniform(low, high), binary(p), gaussian(mean, sd).
    propensity: {"link": "identity" | "logit", "terms": [...]}, each term
    {"coef", optional "var", "fn", "var2"}.
    outcome: {"base_terms", "treated_terms", "noise_sd"}; the true mean
    is base(X) + z * treated(X) with additive gaussian noise.
    """

    name: str
    covariates: Tuple[dict, ...]
    propensity: dict
    outcome: dict
    delta0: float
    tau0: Optional[float] = None
    eff_bound: Optional[float] = None
    truth_seed: int = TRUTH_SEED
    truth_draws: int = TRUTH_DRAWS

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def covariate_names(self) -> Tuple[str, ...]:
        return tuple(c["name"] for c in self.covariates)

    def _eval_terms(self, terms, X: np.ndarray) -> np.ndarray:
        names = self.covariate_names
        total = np.zeros(X.shape[0])
        for t in terms:
            v = np.full(X.shape[0], float(t["coef"]))
            if "var" in t:
                fn = _TERM_FNS[t.get("fn", "identity")]
                v = v * fn(X[:, names.index(t["var"])])
            if "var2" in t:
                v = v * X[:, names.index(t["var2"])]
            total = total + v
        return total

    def propensity_true(self, X: np.ndarray) -> np.ndarray:
        lp = self._eval_terms(self.propensity["terms"], X)
        e = lp if self.propensity.get("link", "logit") == "identity" else expit(lp)
        if np.any(e <= 0.0) or np.any(e >= 1.0):
            raise DataError(f"dgp {self.name}: propensity outside (0, 1)")
        return e

    def outcome_mean(self, z, X: np.ndarray) -> np.ndarray:
        base = self._eval_terms(self.outcome.get("base_terms", ()), X)
        treat = self._eval_terms(self.outcome.get("treated_terms", ()), X)
        return base + np.asarray(z, dtype=float) * treat

    def sample_covariates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = []
        for c in self.covariates:
            fam = c["family"]
            if fam == "uniform":
                cols.append(rng.uniform(c.get("low", 0.0), c.get("high", 1.0), n))
            elif fam == "binary":
                cols.append((rng.random(n) < c.get("p", 0.5)).astype(float))
            elif fam == "gaussian":
                cols.append(c.get("mean", 0.0) + c.get("sd", 1.0) * rng.standard_normal(n))
            else:
                raise DataError(f"unknown covariate family '{fam}'")
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "covariates": [dict(c) for c in self.covariates],
            "propensity": dict(self.propensity),
            "outcome": dict(self.outcome),
            "delta0": self.delta0,
            "tau0": self.tau0,
            "eff_bound": self.eff_bound,
            "truth_seed": self.truth_seed,
            "truth_draws": self.truth_draws,
        }


def dgp_from_dict(spec: dict) -> Dgp:
    known = {"name", "covariates", "propensity", "outcome", "delta0",
             "tau0", "eff_bound", "truth_seed", "truth_draws"}
    unknown = set(spec) - known
    if unknown:
        raise DataError(f"unknown dgp keys: {sorted(unknown)}")
    return Dgp(
        name=spec["name"],
        covariates=tuple(spec["covariates"]),
        propensity=spec["propensity"],
        outcome=spec["outcome"],
        delta0=float(spec["delta0"]),
        tau0=spec.get("tau0"),
        eff_bound=spec.get("eff_bound"),
        truth_seed=int(spec.get("truth_seed", TRUTH_SEED)),
        truth_draws=int(spec.get("truth_draws", TRUTH_DRAWS)),
    )


def _load_registry() -> Dict[str, Dgp]:
    registry = {}
    pkg = resources.files("balancekit") / "dgps"
    for entry in sorted(pkg.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            dgp = dgp_from_dict(json.loads(entry.read_text()))
            registry[dgp.name] = dgp
    return registry


_REGISTRY: Optional[Dict[str, Dgp]] = None


def get_dgp(name: str) -> Dgp:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = _load_registry()
    if name not in _REGISTRY:
        raise DataError(
            f"unknown dgp '{name}'; available: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[name]


def sample(dgp: Dgp, n: int, seed) -> Dataset:
    """Draw a dataset of size n; deterministic in (dgp, n, seed)."""
    if n < 2:
        raise DataError("n must be >= 2")
    rng = np.random.default_rng(seed)
    X = dgp.sample_covariates(rng, n)
    e0 = dgp.propensity_true(X)
    z = (rng.random(n) < e0).astype(float)
    noise = float(dgp.outcome.get("noise_sd", 0.0)) * rng.standard_normal(n)
    r = dgp.outcome_mean(z, X) + noise
    return Dataset(covariates=X, treatment=z, response=r,
                   covariate_names=dgp.covariate_names)


def truth_and_bound(dgp: Dgp) -> Tuple[float, float]:
    """True counterfactual mean under treatment and the efficiency bound.

    Returns stored analytic values when present, else a large Monte
    Carlo evaluation with the recorded seed: tau0 = E q1(X) and
    bound = E[noise_var / e0(X)] + Var(q1(X)).
    """
    if dgp.tau0 is not None and dgp.eff_bound is not None:
        return float(dgp.tau0), float(dgp.eff_bound)
    rng = np.random.default_rng(dgp.truth_seed)
    X = dgp.sample_covariates(rng, dgp.truth_draws)
    e0 = dgp.propensity_true(X)
    q1 = dgp.outcome_mean(np.ones(X.shape[0]), X)
    sigma2 = float(dgp.outcome.get("noise_sd", 0.0)) ** 2
    tau0 = float(dgp.tau0) if dgp.tau0 is not None else float(np.mean(q1))
    bound = (float(dgp.eff_bound) if dgp.eff_bound is not None
             else float(np.mean(sigma2 / e0) + np.var(q1, ddof=1)))
    return tau0, bound


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator pipeline to run inside the Monte Carlo harness."""

    name: str
    estimator: str                     # sub | ipw | aipw | tmle | tipw
    propensity: str = "parametric"     # true | parametric | intercept-only |
                                       # hal-cv | hal-undersmoothed
    outcome: str = "linear"            # true | constant | linear | hal-sieve
    hajek: bool = False
    delta: float = 0.01
    quantile_knots: Optional[int] = 50
    n_lambda: int = 15
    lambda_min_ratio: float = 1e-3
    interaction_degree: Optional[int] = None

    @classmethod
    def from_dict(cls, spec: dict) -> "EstimatorSpec":
        unknown = set(spec) - {f.name for f in
                               cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        if unknown:
            raise DataError(f"unknown estimator spec keys: {sorted(unknown)}")
        return cls(**spec)


def _basis_spec(dgp: Dgp, spec: EstimatorSpec) -> BasisSpec:
    degree = spec.interaction_degree or min(dgp.p, 2)
    strategy = ("quantile", spec.quantile_knots) if spec.quantile_knots \
        else "all-observed"
    return BasisSpec(max_interaction_degree=degree, knot_strategy=strategy)


def _build_outcome(data: Dataset, dgp: Dgp, spec: EstimatorSpec) -> OutcomeModel:
    if spec.outcome == "true":
        return OutcomeModel.from_predictions(
            dgp.outcome_mean(1.0, data.covariates),
            dgp.outcome_mean(0.0, data.covariates),
            kind="true",
        )
    if spec.outcome == "constant":
        c = np.full(data.n, float(np.mean(data.response)))
        return OutcomeModel.from_predictions(c, c, kind="constant")
    if spec.outcome == "linear":
        return fit_outcome(data, OutcomeConfig(kind="linear", arm_specific=True))
    if spec.outcome == "hal-sieve":
        sdata = scale_response(data)
        lo, hi = sdata.response_bounds
        model = fit_outcome(sdata, OutcomeConfig(
            kind="hal-sieve", basis_spec=_basis_spec(dgp, spec),
            n_lambda=spec.n_lambda, lambda_min_ratio=spec.lambda_min_ratio,
        ))
        # map predictions back so every estimator sees the original scale
        return OutcomeModel.from_predictions(
            lo + (hi - lo) * model.q1, lo + (hi - lo) * model.q0,
            kind="hal-sieve",
        )
    raise DataError(f"unknown outcome option '{spec.outcome}'")


def _build_propensity(data: Dataset, dgp: Dgp, spec: EstimatorSpec,
                      outcome: OutcomeModel,
                      hal_cache: Optional[dict] = None) -> PropensityModel:
    if spec.propensity == "true":
        model = PropensityModel.from_scores(
            dgp.propensity_true(data.covariates), kind="true"
        )
    elif spec.propensity == "parametric":
        model = fit_propensity(data, PropensityConfig(kind="parametric-logistic"))
    elif spec.propensity == "intercept-only":
        fit = fit_logistic(np.empty((data.n, 0)), data.treatment)
        model = PropensityModel.from_scores(
            np.full(data.n, float(expit(fit.coefficients[0]))),
            kind="intercept-only",
        )
    elif spec.propensity in ("hal-cv", "hal-undersmoothed"):
        # the CV-selected path is shared between the cv and undersmoothed
        # variants; undersmoothing only re-selects along the fitted path
        key = (spec.quantile_knots, spec.n_lambda, spec.lambda_min_ratio,
               spec.interaction_degree)
        if hal_cache is not None and key in hal_cache:
            model = hal_cache[key]
        else:
            model = fit_propensity(data, PropensityConfig(
                kind="hal-sieve", selection="cv",
                basis_spec=_basis_spec(dgp, spec),
                n_lambda=spec.n_lambda, lambda_min_ratio=spec.lambda_min_ratio,
            ))
            if hal_cache is not None:
                hal_cache[key] = model
        if spec.propensity == "hal-undersmoothed":
            model = undersmooth_select(data, model, None, outcome)
    else:
        raise DataError(f"unknown propensity option '{spec.propensity}'")
    return truncate(model, spec.delta)


def _run_replication(dgp: Dgp, n: int, specs: Sequence[EstimatorSpec],
                     seed: int, rep: int) -> dict:
    data = sample(dgp, n, [seed, rep])
    out_cache: Dict[tuple, OutcomeModel] = {}
    prop_cache: Dict[tuple, PropensityModel] = {}
    hal_cache: dict = {}
    results = {}
    for spec in specs:
        okey = (spec.outcome, spec.quantile_knots, spec.n_lambda,
                spec.lambda_min_ratio, spec.interaction_degree)
        if okey not in out_cache:
            out_cache[okey] = _build_outcome(data, dgp, spec)
        outcome = out_cache[okey]
        pkey = (spec.propensity, spec.delta) + okey
        if pkey not in prop_cache:
            prop_cache[pkey] = _build_propensity(data, dgp, spec, outcome,
                                                 hal_cache)
        propensity = prop_cache[pkey]
        est = estimate(data, spec.estimator, propensity=propensity,
                       outcome=outcome,
                       **({"hajek": spec.hajek} if spec.estimator == "ipw" else {}))
        results[spec.name] = {
            "point": est.point,
            "se": est.se,
            "ci": est.ci_95,
            "eif_mean": float(np.mean(est.if_values)),
            "dcar": float(dcar_residual(data, propensity, outcome)),
        }
    return results


def _rep_worker(args):
    dgp_dict, n, spec_dicts, seed, rep = args
    dgp = dgp_from_dict(dgp_dict)
    specs = [EstimatorSpec.from_dict(s) for s in spec_dicts]
    try:
        return rep, _run_replication(dgp, n, specs, seed, rep), None
    except BalancekitError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class MonteCarloResult:
    dgp_name: str
    n: int
    reps: int
    seed: int
    tau0: float
    eff_bound: float
    estimators: Dict[str, dict]
    n_failures: int
    failure_rate: float
    failed: bool
    failures: Tuple[str, ...] = ()
    draws: Dict[str, List[dict]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp_name,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "tau0": self.tau0,
            "eff_bound": self.eff_bound,
            "estimators": self.estimators,
            "n_failures": self.n_failures,
            "failure_rate": self.failure_rate,
            "failed": self.failed,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def run_monte_carlo(dgp: Dgp, n: int, reps: int,
                    specs: Sequence[EstimatorSpec], seed: int,
                    n_workers: int = 1) -> MonteCarloResult:
    """Independent replications of the full estimation pipeline.

    Per-replication seeds derive from (seed, rep); results are identical
    for any worker count because replications are aggregated in index
    order. Failed replications (e.g., separation) are excluded and
    counted; a failure rate above 5% marks the whole run failed.
    """
    if reps < 1:
        raise DataError("reps must be >= 1")
    tau0, bound = truth_and_bound(dgp)
    args = [(dgp.to_dict(), n, [s.__dict__ for s in specs], seed, rep)
            for rep in range(reps)]
    if n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as ex:
            raw = list(ex.map(_rep_worker, args, chunksize=8))
    else:
        raw = [_rep_worker(a) for a in args]
    raw.sort(key=lambda t: t[0])
    failures = [f"rep {rep}: {err}" for rep, res, err in raw if err is not None]
    ok = [res for _, res, err in raw if err is None]
    per_est: Dict[str, dict] = {}
    draws: Dict[str, List[dict]] = {s.name: [] for s in specs}
    for spec in specs:
        pts = np.array([r[spec.name]["point"] for r in ok])
        ses = np.array([r[spec.name]["se"] for r in ok])
        cis = [r[spec.name]["ci"] for r in ok]
        eifs = np.array([abs(r[spec.name]["eif_mean"]) for r in ok])
        dcars = [r[spec.name]["dcar"] for r in ok]
        draws[spec.name] = [dict(r[spec.name]) for r in ok]
        cover = [lo <= tau0 <= hi for lo, hi in cis]
        variance = float(np.var(pts, ddof=1)) if pts.size > 1 else None
        per_est[spec.name] = {
            "estimator": spec.estimator,
            "mean_bias": float(np.mean(pts) - tau0) if pts.size else None,
            "mc_variance": variance,
            "n_times_variance": n * variance if variance is not None else None,
            "mean_se": float(np.mean(ses)) if ses.size else None,
            "coverage_95": float(np.mean(cover)) if cover else None,
            "mean_abs_eif_mean": float(np.mean(eifs)) if eifs.size else None,
            "mean_abs_dcar": (
                float(np.mean([abs(d) for d in dcars if d is not None]))
                if any(d is not None for d in dcars) else None
            ),
        }
    n_fail = len(failures)
    rate = n_fail / reps
    return MonteCarloResult(
        dgp_name=dgp.name, n=n, reps=reps, seed=seed, tau0=tau0,
        eff_bound=bound, estimators=per_est, n_failures=n_fail,
        failure_rate=rate, failed=rate > MAX_FAILURE_RATE,
        failures=tuple(failures), draws=draws,
    )
