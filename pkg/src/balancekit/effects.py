"""Counterfactual-mean and ATE estimators with influence-function inference.

The primitive estimand is the mean response had everyone received the
requested arm; the ATE is the difference of the two primitives with
influence values subtracted rowwise. All estimators return the point on
the original response scale together with per-observation influence
values, from which Wald inference is derived.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .dataset import Dataset, scale_response
from .errors import ConvergenceError, DataError
from .glm import fit_logistic
from .nuisance import OutcomeModel, PropensityModel

Q_LOGIT_CLIP = 1e-6
EIF_TOL = 1e-8
TIPW_MAX_ITER = 20
FLUCTUATION_TOL = 1e-13


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str                  # "counterfactual-mean(1)" etc. | "ate"
    estimator: str                 # "sub" | "ipw" | "aipw" | "tmle" | "tipw"
    point: float
    if_values: np.ndarray
    se: float
    ci_95: Tuple[float, float]
    n: int
    diagnostics: dict = field(default_factory=dict)


def _wald(point: float, if_values: np.ndarray, level: float = 0.95):
    n = if_values.shape[0]
    sd = float(np.std(if_values, ddof=1))
    se = sd / math.sqrt(n)
    zq = float(norm.ppf(0.5 + level / 2.0))
    return se, (point - zq * se, point + zq * se)


def _finish(estimand, estimator, point, if_values, diagnostics) -> EffectEstimate:
    se, ci = _wald(point, if_values)
    return EffectEstimate(
        estimand=estimand, estimator=estimator, point=float(point),
        if_values=np.asarray(if_values, dtype=float), se=se, ci_95=ci,
        n=if_values.shape[0], diagnostics=diagnostics,
    )


def infer(estimate: EffectEstimate, level: float = 0.95):
    """Wald interval at the requested level from the influence values."""
    if not (0.0 < level < 1.0):
        raise DataError(f"confidence level {level} outside (0, 1)")
    if np.std(estimate.if_values, ddof=1) == 0.0:
        raise DataError("constant influence values: no variance to report")
    se, ci = _wald(estimate.point, estimate.if_values, level)
    return se, ci


def _flip(data: Dataset, propensity: Optional[PropensityModel],
          outcome: Optional[OutcomeModel]):
    """Swap arms so the arm-1 code path computes the arm-0 estimand."""
    d = dataclasses.replace(data, treatment=1.0 - data.treatment)
    p = None
    if propensity is not None:
        p = dataclasses.replace(
            propensity, fitted_scores=1.0 - propensity.fitted_scores
        )
    q = None
    if outcome is not None:
        q = dataclasses.replace(outcome, q1=outcome.q0, q0=outcome.q1)
    return d, p, q


def _plug_in_eif(z, r, e, q1, qobs, tau):
    return z / e * (r - qobs) + q1 - tau


def estimate_sub(data: Dataset, outcome: OutcomeModel,
                 propensity: Optional[PropensityModel] = None,
                 arm: int = 1) -> EffectEstimate:
    """Substitution (plug-in) estimator: the mean counterfactual prediction.

    Influence values are the plug-in influence function when a propensity
    model is supplied (reporting only; not asymptotically valid for
    naive nuisance fits), else the outcome-only residual q1 - tau.
    """
    if arm == 0:
        data, propensity, outcome = _flip(data, propensity, outcome)
    if outcome.q1 is None:
        raise DataError("outcome model lacks counterfactual predictions")
    tau = float(np.mean(outcome.q1))
    if propensity is not None:
        e = propensity.fitted_scores
        if_vals = _plug_in_eif(data.treatment, data.response, e,
                               outcome.q1, outcome.q_observed(data.treatment), tau)
    else:
        if_vals = outcome.q1 - tau
    return _finish(
        f"counterfactual-mean({arm})", "sub", tau, if_vals,
        {"if_valid": False,
         "note": "plug-in influence values; not valid for naive nuisance fits"},
    )


def estimate_ipw(data: Dataset, propensity: PropensityModel,
                 hajek: bool = False, arm: int = 1) -> EffectEstimate:
    """Inverse probability weighted estimator, plain or Hajek-normalized."""
    if arm == 0:
        data, propensity, _ = _flip(data, propensity, None)
    z, r = data.treatment, data.response
    e = propensity.fitted_scores
    if np.any((z == 1.0) & (e <= 0.0)):
        raise DataError("zero propensity on a treated row; truncate first")
    w = z / e
    diagnostics = {"weight_sum": float(w.sum()),
                   "normalized_weight_sum": float(w.sum()) / data.n,
                   "hajek": hajek}
    if hajek:
        wbar = float(np.mean(w))
        tau = float(np.mean(w * r)) / wbar
        if_vals = w * (r - tau) / wbar
    else:
        tau = float(np.mean(w * r))
        if_vals = w * r - tau
    return _finish(f"counterfactual-mean({arm})", "ipw", tau, if_vals, diagnostics)


def estimate_aipw(data: Dataset, propensity: PropensityModel,
                  outcome: OutcomeModel, arm: int = 1) -> EffectEstimate:
    """Augmented IPW (one-step) estimator; influence mean is zero by construction."""
    if arm == 0:
        data, propensity, outcome = _flip(data, propensity, outcome)
    z, r = data.treatment, data.response
    e = propensity.fitted_scores
    if np.any((z == 1.0) & (e <= 0.0)):
        raise DataError("zero propensity on a treated row; truncate first")
    contrib = z / e * (r - outcome.q1) + outcome.q1
    tau = float(np.mean(contrib))
    if_vals = contrib - tau
    dcar = float(np.mean(outcome.q1 / e * (z - e)))
    return _finish(
        f"counterfactual-mean({arm})", "aipw", tau, if_vals,
        {"eif_mean": float(np.mean(if_vals)), "dcar_residual": dcar},
    )


def _to_scaled(data: Dataset, outcome: OutcomeModel):
    """Ensure response and outcome predictions live on the [0, 1] scale."""
    if data.response_bounds is not None:
        if (outcome.response_bounds is not None
                and outcome.response_bounds != data.response_bounds):
            raise DataError("outcome model fitted on different response bounds")
        lo, hi = data.response_bounds
        return data, outcome, lo, hi
    sdata = scale_response(data)
    lo, hi = sdata.response_bounds
    q1 = (outcome.q1 - lo) / (hi - lo)
    q0 = (outcome.q0 - lo) / (hi - lo)
    soutcome = dataclasses.replace(outcome, q1=q1, q0=q0,
                                   response_bounds=(lo, hi))
    return sdata, soutcome, lo, hi


def estimate_tmle(data: Dataset, propensity: PropensityModel,
                  outcome: OutcomeModel, arm: int = 1) -> EffectEstimate:
    """Targeted update of the outcome regression, then substitution.

    The fluctuation regresses the scaled response on the single clever
    covariate h = 1(Z=arm)/e with offset logit(q), shifting q on the
    logit scale until the influence equation is solved; the point is
    mapped back to the original response scale.
    """
    if arm == 0:
        data, propensity, outcome = _flip(data, propensity, outcome)
    sdata, soutcome, lo, hi = _to_scaled(data, outcome)
    z, rs = sdata.treatment, sdata.response
    e = propensity.fitted_scores
    q1c = np.clip(soutcome.q1, Q_LOGIT_CLIP, 1.0 - Q_LOGIT_CLIP)
    q0c = np.clip(soutcome.q0, Q_LOGIT_CLIP, 1.0 - Q_LOGIT_CLIP)
    n_clipped = int(np.sum(q1c != soutcome.q1) + np.sum(q0c != soutcome.q0))
    qobs = np.where(z == 1.0, q1c, q0c)
    h = z / e
    fluct = fit_logistic(
        h.reshape(-1, 1), rs, offset=logit(qobs), add_intercept=False,
        tol=FLUCTUATION_TOL, max_iter=500, check_separation=False,
    )
    if not fluct.converged and fluct.final_gradient_norm > EIF_TOL:
        raise ConvergenceError(
            "TMLE fluctuation did not converge: final gradient "
            f"{fluct.final_gradient_norm:.3e}"
        )
    eps = float(fluct.coefficients[0])
    q1_star = expit(logit(q1c) + eps / e)
    qobs_star = np.where(z == 1.0, q1_star, q0c)
    tau_s = float(np.mean(q1_star))
    eif_s = _plug_in_eif(z, rs, e, q1_star, qobs_star, tau_s)
    tau = lo + (hi - lo) * tau_s
    if_vals = (hi - lo) * eif_s
    return _finish(
        f"counterfactual-mean({arm})", "tmle", tau, if_vals,
        {"epsilon": eps, "eif_mean": float(np.mean(if_vals)),
         "clipped_predictions": n_clipped,
         "fluctuation_gradient": fluct.final_gradient_norm},
    )


def estimate_targeted_ipw(data: Dataset, propensity: PropensityModel,
                          outcome: OutcomeModel, arm: int = 1) -> EffectEstimate:
    """IPW after targeted updating of the propensity score.

    Iterates the logit update e <- expit(logit(e) + eps * h) with
    h = q1/e recomputed each step, until the efficiency-score residual
    |P_n [q1/e](z - e)| falls below tolerance or the iteration cap; a
    miss is a recorded warning, not a failure.
    """
    if arm == 0:
        data, propensity, outcome = _flip(data, propensity, outcome)
    z, r = data.treatment, data.response
    e = np.array(propensity.fitted_scores, dtype=float)
    epsilons = []
    dcar = float(np.mean(outcome.q1 / e * (z - e)))
    for _ in range(TIPW_MAX_ITER):
        if abs(dcar) <= EIF_TOL:
            break
        h = outcome.q1 / e
        fluct = fit_logistic(
            h.reshape(-1, 1), z, offset=logit(e), add_intercept=False,
            tol=1e-12, max_iter=200, check_separation=False,
        )
        eps = float(fluct.coefficients[0])
        epsilons.append(eps)
        e = expit(logit(e) + eps * h)
        dcar = float(np.mean(outcome.q1 / e * (z - e)))
    converged = abs(dcar) <= EIF_TOL
    tau = float(np.mean(z * r / e))
    h = outcome.q1 / e
    if_vals = z * r / e - tau - h * (z - e)
    return _finish(
        f"counterfactual-mean({arm})", "tipw", tau, if_vals,
        {"epsilons": epsilons, "dcar_residual": dcar,
         "targeting_converged": converged, "iterations": len(epsilons)},
    )


_ESTIMATORS = {
    "sub": lambda d, p, q, **kw: estimate_sub(d, q, propensity=p, **kw),
    "ipw": lambda d, p, q, **kw: estimate_ipw(d, p, **kw),
    "aipw": lambda d, p, q, **kw: estimate_aipw(d, p, q, **kw),
    "tmle": lambda d, p, q, **kw: estimate_tmle(d, p, q, **kw),
    "tipw": lambda d, p, q, **kw: estimate_targeted_ipw(d, p, q, **kw),
}


def estimate(data: Dataset, estimator: str,
             propensity: Optional[PropensityModel] = None,
             outcome: Optional[OutcomeModel] = None,
             arm: int = 1, **kwargs) -> EffectEstimate:
    """Dispatch to a named estimator for one counterfactual-mean arm."""
    if estimator not in _ESTIMATORS:
        raise DataError(f"unknown estimator '{estimator}'")
    return _ESTIMATORS[estimator](data, propensity, outcome, arm=arm, **kwargs)


def estimate_ate(data: Dataset, estimator: str,
                 propensity: Optional[PropensityModel] = None,
                 outcome: Optional[OutcomeModel] = None,
                 **kwargs) -> EffectEstimate:
    """ATE as the difference of the two counterfactual-mean primitives."""
    est1 = estimate(data, estimator, propensity, outcome, arm=1, **kwargs)
    est0 = estimate(data, estimator, propensity, outcome, arm=0, **kwargs)
    point = est1.point - est0.point
    if_vals = est1.if_values - est0.if_values
    return _finish(
        "ate", estimator, point, if_vals,
        {"arm1": est1.diagnostics, "arm0": est0.diagnostics},
    )
