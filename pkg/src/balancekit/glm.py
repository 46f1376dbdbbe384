"""Logistic and linear model fitting: the numeric core.

Unpenalized logistic fits use iteratively reweighted least squares;
L1-penalized fits use cyclic coordinate descent on the local quadratic
approximation (intercept unpenalized, fixed cycling order). Both report
convergence against the empirical score vector
s_j = (1/n) sum_i w_i d_ij (y_i - fitted_i),
whose max-norm at a converged unpenalized fit is <= TOL_SCORE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logit  # noqa: F401  (logit re-exported for callers)

from . import _cd
from .errors import ConvergenceError, DataError, SeparationError

TOL_SCORE = 1e-8
MAX_ITER_IRLS = 100
MAX_SWEEPS_CD = 10_000
SEPARATION_COEF = 30.0
RIDGE_LAST_RESORT = 1e-10
PROB_CLIP = 1e-10  # inside IRLS weights only, never in reported predictions


@dataclass(frozen=True)
class GlmFit:
    """A fitted (possibly penalized, possibly offset) GLM."""

    coefficients: np.ndarray   # intercept first when has_intercept
    family: str                # "logistic" | "linear"
    penalty: float = 0.0
    offset_used: bool = False
    has_intercept: bool = True
    converged: bool = True
    iterations: int = 0
    final_gradient_norm: float = 0.0
    ridge_used: bool = False

    def linear_predictor(self, design, offset=None) -> np.ndarray:
        D = _with_intercept(np.asarray(design, dtype=float), self.has_intercept)
        eta = D @ self.coefficients
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=float)
        return eta

    def predict(self, design, offset=None) -> np.ndarray:
        eta = self.linear_predictor(design, offset)
        return expit(eta) if self.family == "logistic" else eta


def _with_intercept(D: np.ndarray, add: bool) -> np.ndarray:
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    if not add:
        return D
    return np.column_stack([np.ones(D.shape[0]), D])


def _check_inputs(D, y, offset, weights):
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if D.shape[0] not in (n,):
        raise DataError(f"design has {D.shape[0]} rows, y has {n}")
    if not np.all(np.isfinite(D)):
        raise DataError("non-finite value in design matrix")
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite value in response")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise DataError("negative observation weight")
        if w.sum() <= 0:
            raise DataError("weights sum to zero")
    return D, y, off, w


def _solve_normal(H, g):
    """Solve H x = g, falling back to a tiny ridge when H is singular."""
    try:
        L = np.linalg.cholesky(H)
        x = np.linalg.solve(L.T, np.linalg.solve(L, g))
        if np.all(np.isfinite(x)):
            return x, False
    except np.linalg.LinAlgError:
        pass
    Hr = H + RIDGE_LAST_RESORT * np.eye(H.shape[0])
    return np.linalg.solve(Hr, g), True


def _bernoulli_nll(y, eta, w):
    # numerically stable: -[y*eta - log(1 + e^eta)]
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


def fit_logistic(
    design,
    y,
    offset=None,
    weights=None,
    *,
    add_intercept: bool = True,
    tol: float = TOL_SCORE,
    max_iter: int = MAX_ITER_IRLS,
    check_separation: bool = True,
) -> GlmFit:
    """Maximize the (weighted) Bernoulli log-likelihood by IRLS.

    The linear predictor is design @ beta + offset; y may be fractional
    in [0, 1] (quasi-binomial working likelihood), which the TMLE-style
    fluctuation fits rely on.
    """
    D0, y, off, w = _check_inputs(design, y, offset, weights)
    D = _with_intercept(D0, add_intercept)
    n, m = D.shape
    beta = np.zeros(m)
    ridge_used = False
    eta = D @ beta + off
    nll = _bernoulli_nll(y, eta, w)
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(eta)
        score = D.T @ (w * (y - p)) / n
        grad_norm = float(np.max(np.abs(score))) if m else 0.0
        if grad_norm <= tol:
            return GlmFit(
                coefficients=beta, family="logistic", offset_used=offset is not None,
                has_intercept=add_intercept, converged=True, iterations=it - 1,
                final_gradient_norm=grad_norm, ridge_used=ridge_used,
            )
        pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        W = w * pc * (1.0 - pc)
        H = (D * W[:, None]).T @ D / n
        step, used = _solve_normal(H, score)
        ridge_used = ridge_used or used
        # step halving keeps the deviance monotone
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            eta_c = D @ cand + off
            nll_c = _bernoulli_nll(y, eta_c, w)
            if nll_c <= nll + 1e-14 * (1.0 + abs(nll)):
                break
            scale *= 0.5
        moved = scale * np.max(np.abs(step)) if m else 0.0
        beta = beta + scale * step
        eta = D @ beta + off
        nll = _bernoulli_nll(y, eta, w)
        if moved < 1e-15 * (1.0 + np.max(np.abs(beta))):
            break  # step stalled at machine precision
        if check_separation and np.max(np.abs(beta)) > SEPARATION_COEF:
            raise SeparationError(
                "perfect separation suspected: coefficient magnitude "
                f"{np.max(np.abs(beta)):.2f} exceeds {SEPARATION_COEF} on the logit scale"
            )
    p = expit(eta)
    score = D.T @ (w * (y - p)) / n
    grad_norm = float(np.max(np.abs(score))) if m else 0.0
    return GlmFit(
        coefficients=beta, family="logistic", offset_used=offset is not None,
        has_intercept=add_intercept, converged=grad_norm <= tol,
        iterations=it, final_gradient_norm=grad_norm, ridge_used=ridge_used,
    )


def _kkt_violation(score, beta, lam, penalized):
    """Max violation of the L1 subgradient conditions at (beta, lam)."""
    v = 0.0
    for j, s in enumerate(score):
        if not penalized[j]:
            v = max(v, abs(s))
        elif beta[j] == 0.0:
            v = max(v, abs(s) - lam)
        else:
            v = max(v, abs(s - lam * np.sign(beta[j])))
    return v


def fit_logistic_l1(
    design,
    y,
    lam: float,
    offset=None,
    *,
    add_intercept: bool = True,
    coef_init: Optional[np.ndarray] = None,
    tol: float = TOL_SCORE,
    max_sweeps: int = MAX_SWEEPS_CD,
    check_separation: bool = True,
) -> GlmFit:
    """Minimize (1/n) * neg-log-lik + lam * sum |beta_j| by coordinate descent.

    Intercept unpenalized. Deterministic: cycling follows column order,
    with active-set sweeps interleaved with a full sweep every 10
    iterations. Convergence is declared on the exact subgradient
    conditions, evaluated at the true (non-quadratic) score.
    """
    if lam < 0:
        raise DataError(f"negative penalty {lam}")
    D0, y, off, _ = _check_inputs(design, y, offset, None)
    D = _with_intercept(D0, add_intercept)
    n, m = D.shape
    penalized = np.ones(m, dtype=bool)
    if add_intercept:
        penalized[0] = False
    beta = np.zeros(m) if coef_init is None else np.array(coef_init, dtype=float)
    if _cd.HAVE_NUMBA:
        beta, sweeps, grad_norm, converged, separated = _cd.cd_solve(
            np.ascontiguousarray(D), y, off, float(lam), penalized, beta,
            tol, 200, max_sweeps, SEPARATION_COEF,
        )
        if separated and check_separation:
            raise SeparationError(
                "perfect separation suspected during penalized fit: "
                f"coefficient magnitude exceeds {SEPARATION_COEF}"
            )
        return GlmFit(
            coefficients=beta, family="logistic", penalty=float(lam),
            offset_used=offset is not None, has_intercept=add_intercept,
            converged=converged, iterations=int(sweeps),
            final_gradient_norm=float(grad_norm),
        )
    sweeps = 0
    converged = False
    grad_norm = np.inf
    for outer in range(200):
        eta = D @ beta + off
        p = expit(eta)
        score = D.T @ (y - p) / n
        grad_norm = _kkt_violation(score, beta, lam, penalized)
        if grad_norm <= tol:
            converged = True
            break
        pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        w = pc * (1.0 - pc)
        z = D @ beta + (y - p) / w  # working response, offset excluded
        denom = (D * D * w[:, None]).sum(axis=0) / n
        r = z - D @ beta
        inner_tol = max(tol, 1e-14)
        for inner in range(max_sweeps):
            full = inner % 10 == 0
            idx = range(m) if full else np.flatnonzero(beta != 0.0)
            max_delta = 0.0
            for j in idx:
                if denom[j] <= 0:
                    continue
                rho = (w * D[:, j] * r).sum() / n + denom[j] * beta[j]
                if penalized[j]:
                    new = np.sign(rho) * max(abs(rho) - lam, 0.0) / denom[j]
                else:
                    new = rho / denom[j]
                delta = new - beta[j]
                if delta != 0.0:
                    r -= delta * D[:, j]
                    beta[j] = new
                    max_delta = max(max_delta, abs(delta) * np.sqrt(denom[j]))
            sweeps += 1
            if full and max_delta < inner_tol:
                break
        if check_separation and np.max(np.abs(beta)) > SEPARATION_COEF:
            raise SeparationError(
                "perfect separation suspected during penalized fit: "
                f"coefficient magnitude exceeds {SEPARATION_COEF}"
            )
    return GlmFit(
        coefficients=beta, family="logistic", penalty=float(lam),
        offset_used=offset is not None, has_intercept=add_intercept,
        converged=converged, iterations=sweeps,
        final_gradient_norm=grad_norm,
    )


def lambda_max(design, y, offset=None, *, add_intercept: bool = True) -> float:
    """Smallest penalty zeroing every penalized coefficient."""
    D0, y, off, _ = _check_inputs(design, y, offset, None)
    if y.min() == y.max():
        raise DataError("degenerate response: single class")
    null = fit_logistic(
        np.empty((y.shape[0], 0)), y, offset=off if offset is not None else None,
        add_intercept=add_intercept,
    )
    if add_intercept:
        p0 = expit(null.coefficients[0] + off)
    else:
        p0 = expit(off)
    score = np.abs(D0.T @ (y - p0)) / y.shape[0]
    lmax = float(score.max()) if score.size else 0.0
    if lmax <= 0:
        raise DataError("lambda_max is zero: design carries no signal about y")
    return lmax


def lambda_path(design, y, n_lambda: int, ratio: float, offset=None) -> np.ndarray:
    """Geometric grid from lambda_max down to lambda_max * ratio."""
    if n_lambda < 2:
        raise DataError("n_lambda must be >= 2")
    if not (0.0 < ratio < 1.0):
        raise DataError("ratio must lie in (0, 1)")
    lmax = lambda_max(design, y, offset=offset)
    return lmax * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def fit_linear(
    design,
    y,
    weights=None,
    *,
    add_intercept: bool = True,
) -> GlmFit:
    """Weighted least squares with the same rank-deficiency fallback."""
    D0, y, _, w = _check_inputs(design, y, None, weights)
    D = _with_intercept(D0, add_intercept)
    n = D.shape[0]
    H = (D * w[:, None]).T @ D / n
    g = D.T @ (w * y) / n
    beta, ridge_used = _solve_normal(H, g)
    resid = y - D @ beta
    score = D.T @ (w * resid) / n
    grad_norm = float(np.max(np.abs(score))) if score.size else 0.0
    return GlmFit(
        coefficients=beta, family="linear", has_intercept=add_intercept,
        converged=True, iterations=1, final_gradient_norm=grad_norm,
        ridge_used=ridge_used,
    )


def penalized_objective(fit: GlmFit, design, y, offset=None) -> float:
    """(1/n) * negative log-likelihood + penalty, at the fitted coefficients."""
    D0, y, off, _ = _check_inputs(design, y, offset, None)
    eta = fit.linear_predictor(D0, off)
    n = y.shape[0]
    nll = _bernoulli_nll(y, eta, np.ones(n)) / n
    coefs = fit.coefficients[1:] if fit.has_intercept else fit.coefficients
    return nll + fit.penalty * float(np.abs(coefs).sum())
