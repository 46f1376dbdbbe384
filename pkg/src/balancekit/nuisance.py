"""Propensity score and outcome regression estimation.

Supports main-terms parametric logistic fits and L1-penalized sieve fits
on the indicator basis, with penalty selection by V-fold cross-validation
or by the score-criterion undersmoothing walk along the penalty path.
Positivity truncation is applied after selection, never during it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .basis import BasisExpansion, BasisSpec, build_basis
from .dataset import Dataset
from .errors import DataError, SeparationError
from .glm import GlmFit, fit_linear, fit_logistic, fit_logistic_l1, lambda_path

DEFAULT_DELTA = 0.01
DEFAULT_CV_FOLDS = 5
DEFAULT_CV_SEED = 20230
UNDERSMOOTH_MULTIPLIER = 1.0


@dataclass(frozen=True)
class PropensityConfig:
    kind: str = "parametric-logistic"      # or "hal-sieve"
    selection: str = "cv"                  # "cv" | "undersmoothed" | "fixed"
    basis_spec: Optional[BasisSpec] = None
    n_lambda: int = 20
    lambda_min_ratio: float = 1e-4
    lambda_fixed: Optional[float] = None
    cv_folds: int = DEFAULT_CV_FOLDS
    cv_seed: int = DEFAULT_CV_SEED
    delta: float = DEFAULT_DELTA


@dataclass(frozen=True)
class OutcomeConfig:
    kind: str = "linear"                   # "linear" | "logistic" | "hal-sieve"
    arm_specific: bool = True
    intercept_only: bool = False
    interactions: bool = False             # Z x X products, pooled fits only
    basis_spec: Optional[BasisSpec] = None
    n_lambda: int = 20
    lambda_min_ratio: float = 1e-4
    cv_folds: int = DEFAULT_CV_FOLDS
    cv_seed: int = DEFAULT_CV_SEED


@dataclass(frozen=True)
class PropensityModel:
    kind: str
    fitted_scores: np.ndarray
    fit: Optional[GlmFit] = None
    basis: Optional[BasisExpansion] = None
    lambda_selected: float = 0.0
    selection: str = "fixed"
    truncation_delta: float = 0.0
    clamp_count: int = 0
    path_lambdas: Tuple[float, ...] = ()
    path_fits: Tuple[GlmFit, ...] = ()
    path_scores: Tuple[np.ndarray, ...] = ()
    cv_index: Optional[int] = None
    undersmooth_satisfied: Optional[bool] = None

    @classmethod
    def from_scores(cls, scores, kind: str = "fixed-scores") -> "PropensityModel":
        s = np.asarray(scores, dtype=float)
        if np.any(s <= 0.0) or np.any(s >= 1.0):
            raise DataError("supplied propensity scores must lie in (0, 1)")
        return cls(kind=kind, fitted_scores=s)


@dataclass(frozen=True)
class OutcomeModel:
    kind: str
    q1: np.ndarray                  # predictions under treatment
    q0: np.ndarray                  # predictions under control
    fits: Tuple[GlmFit, ...] = ()
    response_bounds: Optional[Tuple[float, float]] = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, q1, q0, kind: str = "supplied",
                         response_bounds=None) -> "OutcomeModel":
        return cls(
            kind=kind,
            q1=np.asarray(q1, dtype=float),
            q0=np.asarray(q0, dtype=float),
            response_bounds=response_bounds,
        )

    def q_observed(self, treatment) -> np.ndarray:
        z = np.asarray(treatment, dtype=float)
        return np.where(z == 1.0, self.q1, self.q0)


def _stratified_folds(z: np.ndarray, v: int, seed: int) -> np.ndarray:
    """Fold labels, treatment-arm stratified, deterministic in seed."""
    rng = np.random.default_rng(seed)
    labels = np.empty(z.shape[0], dtype=int)
    for arm in (0.0, 1.0):
        idx = np.flatnonzero(z == arm)
        rng.shuffle(idx)
        labels[idx] = np.arange(idx.size) % v
    return labels


def _deviance(y, p) -> float:
    pc = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-2.0 * np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def _fit_l1_path(design, y, lambdas) -> list:
    """Warm-started fits along a descending penalty path.

    A SeparationError at some penalty truncates the path there (the
    remaining, weaker penalties would only be more separated).
    """
    fits = []
    coef = None
    for lam in lambdas:
        try:
            f = fit_logistic_l1(design, y, lam, coef_init=coef)
        except SeparationError:
            break
        fits.append(f)
        coef = f.coefficients
    if not fits:
        raise SeparationError("penalized path separated at every penalty")
    return fits


def cv_deviance_path(design, y, lambdas, v: int, seed: int) -> np.ndarray:
    """Mean validation deviance per penalty over stratified folds."""
    folds = _stratified_folds(y, v, seed)
    dev = np.zeros(len(lambdas))
    counts = np.zeros(len(lambdas))
    for k in range(v):
        tr = folds != k
        va = ~tr
        if y[tr].min() == y[tr].max() or va.sum() == 0:
            continue
        coef = None
        for i, lam in enumerate(lambdas):
            try:
                f = fit_logistic_l1(design[tr], y[tr], lam, coef_init=coef)
            except SeparationError:
                break
            coef = f.coefficients
            dev[i] += _deviance(y[va], f.predict(design[va]))
            counts[i] += 1
    if not counts.max():
        raise DataError("cross-validation failed in every fold")
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_dev = np.where(counts == counts.max(), dev / np.maximum(counts, 1), np.inf)
    return mean_dev


def fit_propensity(data: Dataset, config: PropensityConfig) -> PropensityModel:
    """Fit the treatment-assignment model per the configuration.

    hal-sieve fits compute the full penalty path on the indicator basis
    and select by stratified V-fold CV deviance unless a fixed penalty is
    requested; the path is retained so undersmooth_select can walk it.
    """
    z = data.treatment
    if config.kind == "parametric-logistic":
        fit = fit_logistic(data.covariates, z)
        scores = fit.predict(data.covariates)
        return PropensityModel(
            kind=config.kind, fitted_scores=scores, fit=fit,
            selection="fixed", lambda_selected=0.0,
        )
    if config.kind != "hal-sieve":
        raise DataError(f"unknown propensity kind '{config.kind}'")
    if data.p == 0:
        raise DataError("hal-sieve propensity requires at least one covariate")
    spec = config.basis_spec or BasisSpec(
        max_interaction_degree=min(data.p, 2)
    )
    expansion = build_basis(data, spec)
    design = expansion.design[:, 1:]
    lambdas = lambda_path(design, z, config.n_lambda, config.lambda_min_ratio)
    fits = _fit_l1_path(design, z, lambdas)
    lambdas = lambdas[: len(fits)]
    path_scores = tuple(f.predict(design) for f in fits)
    if config.selection == "fixed":
        if config.lambda_fixed is None:
            raise DataError("selection='fixed' requires lambda_fixed")
        idx = int(np.argmin(np.abs(lambdas - config.lambda_fixed)))
        sel = "fixed"
    else:
        dev = cv_deviance_path(design, z, lambdas, config.cv_folds, config.cv_seed)
        idx = int(np.argmin(dev))
        sel = "cv"
    return PropensityModel(
        kind="hal-sieve", fitted_scores=path_scores[idx], fit=fits[idx],
        basis=expansion, lambda_selected=float(lambdas[idx]), selection=sel,
        path_lambdas=tuple(float(v) for v in lambdas), path_fits=tuple(fits),
        path_scores=path_scores, cv_index=idx,
    )


def undersmooth_select(
    data: Dataset,
    model: PropensityModel,
    directions: Optional[Sequence[np.ndarray]],
    outcome: OutcomeModel,
    *,
    multiplier: float = UNDERSMOOTH_MULTIPLIER,
) -> PropensityModel:
    """Walk the penalty path below the CV choice until the score criteria hold.

    Stops at the first penalty where the efficiency-score residual
    |P_n [q1/e](z - e)| drops below sigma_hat / (sqrt(n) * log n), with
    sigma_hat the sd of the plug-in influence values at that penalty, and
    where every requested direction f satisfies the analogous bound with
    its own score sd. Falls through to the smallest penalty with
    undersmooth_satisfied=False when the criteria are never met.
    """
    if model.kind != "hal-sieve" or not model.path_fits:
        raise DataError("undersmooth_select requires a hal-sieve fit with a stored path")
    start = model.cv_index if model.cv_index is not None else 0
    if start >= len(model.path_lambdas):
        raise DataError("empty penalty path below the CV selection")
    z = data.treatment
    r = data.response
    n = data.n
    scale = math.sqrt(n) * math.log(n)
    dir_list = [np.asarray(f, dtype=float) for f in directions] if directions else []
    chosen = None
    satisfied = False
    for i in range(start, len(model.path_lambdas)):
        e = model.path_scores[i]
        if np.any(e <= 0.0) or np.any(e >= 1.0):
            continue
        h = outcome.q1 / e
        dcar = float(np.mean(h * (z - e)))
        eif = z / e * (r - outcome.q_observed(z)) + outcome.q1
        sigma = float(np.std(eif, ddof=1))
        ok = abs(dcar) <= multiplier * sigma / scale
        if ok:
            for f in dir_list:
                s = f * (z - e)
                sigma_f = float(np.std(s, ddof=1))
                if sigma_f == 0.0:
                    continue
                if abs(float(np.mean(s))) > multiplier * sigma_f / scale:
                    ok = False
                    break
        chosen = i
        if ok:
            satisfied = True
            break
    if chosen is None:
        chosen = len(model.path_lambdas) - 1
    return dataclasses.replace(
        model,
        fitted_scores=model.path_scores[chosen],
        fit=model.path_fits[chosen],
        lambda_selected=model.path_lambdas[chosen],
        selection="undersmoothed",
        undersmooth_satisfied=satisfied,
    )


def truncate(model: PropensityModel, delta: float) -> PropensityModel:
    """Clamp fitted scores to [delta, 1 - delta], recording the clamp count."""
    if not (0.0 <= delta < 0.5):
        raise DataError(f"truncation delta {delta} outside [0, 0.5)")
    scores = model.fitted_scores
    clamped = np.clip(scores, delta, 1.0 - delta)
    count = int(np.sum(clamped != scores))
    return dataclasses.replace(
        model, fitted_scores=clamped, truncation_delta=delta,
        clamp_count=model.clamp_count + count,
    )


def _outcome_design(data: Dataset, config: OutcomeConfig, z_value=None):
    """Design for pooled fits, optionally with treatment forced to z_value."""
    z = data.treatment if z_value is None else np.full(data.n, float(z_value))
    cols = [z]
    if not config.intercept_only:
        cols.append(data.covariates)
        if config.interactions:
            cols.append(data.covariates * z[:, None])
    return np.column_stack(cols)


def fit_outcome(data: Dataset, config: OutcomeConfig) -> OutcomeModel:
    """Fit the response regression and produce both counterfactual columns.

    logistic and hal-sieve kinds require the response to lie in [0, 1]
    (scale_response first); hal-sieve fits are arm-specific penalized
    logistic fits on the indicator basis with CV-selected penalties.
    """
    z = data.treatment
    r = data.response
    if config.kind in ("logistic", "hal-sieve"):
        if r.min() < 0.0 or r.max() > 1.0:
            raise DataError(
                f"{config.kind} outcome fit requires a response in [0, 1]; "
                "apply scale_response first"
            )
    if config.kind == "linear":
        if config.arm_specific:
            fits, preds = [], []
            X = data.covariates if not config.intercept_only else np.empty((data.n, 0))
            for arm in (1.0, 0.0):
                mask = z == arm
                f = fit_linear(X[mask], r[mask])
                fits.append(f)
                preds.append(f.predict(X))
            return OutcomeModel(kind="linear", q1=preds[0], q0=preds[1],
                                fits=tuple(fits),
                                response_bounds=data.response_bounds)
        f = fit_linear(_outcome_design(data, config), r)
        q1 = f.predict(_outcome_design(data, config, 1.0))
        q0 = f.predict(_outcome_design(data, config, 0.0))
        return OutcomeModel(kind="linear", q1=q1, q0=q0, fits=(f,),
                            response_bounds=data.response_bounds)
    if config.kind == "logistic":
        if config.arm_specific:
            fits, preds = [], []
            X = data.covariates if not config.intercept_only else np.empty((data.n, 0))
            for arm in (1.0, 0.0):
                mask = z == arm
                f = fit_logistic(X[mask], r[mask], check_separation=False)
                fits.append(f)
                preds.append(f.predict(X))
            return OutcomeModel(kind="logistic", q1=preds[0], q0=preds[1],
                                fits=tuple(fits),
                                response_bounds=data.response_bounds)
        f = fit_logistic(_outcome_design(data, config), r, check_separation=False)
        q1 = f.predict(_outcome_design(data, config, 1.0))
        q0 = f.predict(_outcome_design(data, config, 0.0))
        return OutcomeModel(kind="logistic", q1=q1, q0=q0, fits=(f,),
                            response_bounds=data.response_bounds)
    if config.kind == "hal-sieve":
        if data.p == 0:
            raise DataError("hal-sieve outcome requires at least one covariate")
        spec = config.basis_spec or BasisSpec(max_interaction_degree=min(data.p, 2))
        expansion = build_basis(data, spec)
        design = expansion.design[:, 1:]
        fits, preds, lams = [], [], []
        for arm in (1.0, 0.0):
            mask = z == arm
            d_arm, r_arm = design[mask], r[mask]
            if r_arm.min() == r_arm.max():
                # constant arm response: intercept-only fit, no path
                f = fit_logistic(np.empty((int(mask.sum()), 0)), r_arm)
                fits.append(f)
                preds.append(np.full(data.n, float(r_arm[0])))
                lams.append(0.0)
                continue
            lambdas = lambda_path(d_arm, r_arm, config.n_lambda,
                                  config.lambda_min_ratio)
            path = _fit_l1_path(d_arm, r_arm, lambdas)
            lambdas = lambdas[: len(path)]
            dev = np.zeros(len(path))
            folds = _stratified_folds(
                np.round(r_arm) if set(np.unique(r_arm)) <= {0.0, 1.0}
                else (r_arm > np.median(r_arm)).astype(float),
                config.cv_folds, config.cv_seed + int(arm),
            )
            counts = np.zeros(len(path))
            for k in range(config.cv_folds):
                tr = folds != k
                if tr.all() or not tr.any() or r_arm[tr].min() == r_arm[tr].max():
                    continue
                coef = None
                for i, lam in enumerate(lambdas):
                    try:
                        fk = fit_logistic_l1(d_arm[tr], r_arm[tr], lam, coef_init=coef)
                    except SeparationError:
                        break
                    coef = fk.coefficients
                    dev[i] += _deviance(r_arm[~tr], fk.predict(d_arm[~tr]))
                    counts[i] += 1
            if counts.max():
                scored = np.where(counts == counts.max(), dev, np.inf)
                idx = int(np.argmin(scored))
            else:
                idx = len(path) - 1
            fits.append(path[idx])
            preds.append(path[idx].predict(design))
            lams.append(float(lambdas[idx]))
        return OutcomeModel(
            kind="hal-sieve", q1=preds[0], q0=preds[1], fits=tuple(fits),
            response_bounds=data.response_bounds,
            diagnostics={"lambda_treated": lams[0], "lambda_control": lams[1]},
        )
    raise DataError(f"unknown outcome kind '{config.kind}'")
