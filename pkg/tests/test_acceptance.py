"""End-to-end acceptance checks at the documented tolerances.

Each test exercises one externally stated guarantee: exact arithmetic on
the four-point oracle problem, influence-function centering, score-test
calibration and exactness, efficiency-bound attainment with sieve
nuisances, IPW inefficiency, double robustness, the undersmoothing
balance-to-efficiency chain, penalized-fit optimality against a brute
force, and CLI determinism.
"""

import csv
import json
import time

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from balancekit.balance import score_test
from balancekit.cli import main as cli_main
from balancekit.dataset import from_arrays
from balancekit.effects import estimate, estimate_aipw, estimate_tmle
from balancekit.glm import fit_logistic, fit_logistic_l1, penalized_objective
from balancekit.nuisance import (
    OutcomeConfig,
    PropensityConfig,
    PropensityModel,
    fit_outcome,
    fit_propensity,
)
from balancekit.sim import EstimatorSpec, get_dgp, run_monte_carlo, sample

ALL_ESTIMATORS = ("sub", "ipw", "aipw", "tmle", "tipw")


# ---------------------------------------------------------------------------
# heavy Monte Carlo runs shared between criteria


@pytest.fixture(scope="module")
def bench1_sieve_run():
    """bench1 at n=1000, 500 reps: sieve-nuisance aipw/tmle plus known-e0 ipw."""
    specs = [
        EstimatorSpec(name="aipw", estimator="aipw", propensity="hal-cv",
                      outcome="hal-sieve"),
        EstimatorSpec(name="tmle", estimator="tmle", propensity="hal-cv",
                      outcome="hal-sieve"),
        EstimatorSpec(name="ipw_true", estimator="ipw", propensity="true",
                      outcome="hal-sieve"),
    ]
    return run_monte_carlo(get_dgp("bench1"), 1000, 500, specs, seed=7)


@pytest.fixture(scope="module")
def bench2_misspecified_run():
    """bench2 at n=1000, 500 reps with one nuisance wrong at a time."""
    specs = [
        EstimatorSpec(name="bad_outcome", estimator="aipw",
                      propensity="true", outcome="constant"),
        EstimatorSpec(name="bad_propensity", estimator="aipw",
                      propensity="intercept-only", outcome="linear"),
    ]
    return run_monte_carlo(get_dgp("bench2"), 1000, 500, specs, seed=31)


@pytest.fixture(scope="module")
def bench2_undersmoothing_run():
    """bench2 at n=1000, 300 reps: CV-selected vs undersmoothed sieve IPW."""
    kw = dict(outcome="linear", hajek=True, quantile_knots=20, n_lambda=12,
              lambda_min_ratio=1e-3, interaction_degree=1)
    specs = [
        EstimatorSpec(name="cv", estimator="ipw", propensity="hal-cv", **kw),
        EstimatorSpec(name="us", estimator="ipw",
                      propensity="hal-undersmoothed", **kw),
    ]
    return run_monte_carlo(get_dgp("bench2"), 1000, 300, specs, seed=13)


# ---------------------------------------------------------------------------
# 1. oracle coincidence on the four-point problem


def test_four_point_oracle_all_estimators_exact(d4, d4_nuisances):
    propensity, outcome = d4_nuisances
    start = time.perf_counter()
    for name in ALL_ESTIMATORS:
        est = estimate(d4, name, propensity=propensity, outcome=outcome)
        assert est.point == pytest.approx(4.0, abs=1e-10), name
    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# 2. influence-function mean is solved to numerical zero


def test_influence_function_mean_zero_over_random_datasets():
    rng = np.random.default_rng(101)
    checked = 0
    for _ in range(100):
        n = 200
        x = rng.uniform(size=n)
        e0 = expit(1.2 * (x - 0.5))
        z = (rng.uniform(size=n) < e0).astype(float)
        if z.min() == z.max():
            z[0] = 1.0 - z[0]
        r = z * (1.0 + x) + rng.normal(size=n)
        data = from_arrays(x, z, r)
        prop = fit_propensity(data, PropensityConfig())
        outcome = fit_outcome(data, OutcomeConfig(kind="linear"))
        for est in (estimate_aipw(data, prop, outcome),
                    estimate_tmle(data, prop, outcome)):
            assert abs(float(np.mean(est.if_values))) <= 1e-8
            checked += 1
    assert checked == 200


# ---------------------------------------------------------------------------
# 3. score-test size under a correctly specified treatment model


def test_score_test_calibrated_at_five_percent():
    # bench1 has a constant treatment probability, so the intercept-only
    # logistic fit is correctly specified; the covariate direction is
    # centered so that plugging in the fitted rate leaves the variance
    # estimate calibrated
    dgp = get_dgp("bench1")
    reps, n, rejections = 2000, 500, 0
    for rep in range(reps):
        data = sample(dgp, n, [401, rep])
        fit = fit_logistic(np.empty((n, 0)), data.treatment)
        prop = PropensityModel.from_scores(
            np.full(n, float(expit(fit.coefficients[0])))
        )
        f = data.covariates[:, 0] - data.covariates[:, 0].mean()
        _, p = score_test(data, prop, f)
        rejections += p < 0.05
    assert 0.03 <= rejections / reps <= 0.07


# ---------------------------------------------------------------------------
# 4. exactly solved score equations give a null test


def test_solved_directions_report_null_statistic():
    rng = np.random.default_rng(202)
    for _ in range(25):
        n = int(rng.integers(40, 150))
        m = int(rng.integers(1, 4))
        X = rng.normal(size=(n, m))
        z = (rng.uniform(size=n) < expit(X @ rng.normal(scale=0.7, size=m))
             ).astype(float)
        if z.min() == z.max():
            z[0] = 1.0 - z[0]
        data = from_arrays(X, z, np.zeros(n))
        model = fit_propensity(data, PropensityConfig())
        for j in range(m):
            t, p = score_test(data, model, X[:, j])
            assert abs(t) <= 1e-6
            assert p >= 0.999999


# ---------------------------------------------------------------------------
# 5. efficiency-bound attainment with sieve nuisances


def test_sieve_aipw_and_tmle_attain_efficiency_bound(bench1_sieve_run):
    res = bench1_sieve_run
    assert not res.failed
    assert res.eff_bound == 2.25
    for name in ("aipw", "tmle"):
        stats = res.estimators[name]
        assert stats["n_times_variance"] == pytest.approx(2.25, rel=0.15), name
        assert 0.925 <= stats["coverage_95"] <= 0.975, name


# ---------------------------------------------------------------------------
# 6. IPW with the known propensity is less efficient


def test_known_propensity_ipw_has_larger_variance(bench1_sieve_run):
    res = bench1_sieve_run
    assert (res.estimators["ipw_true"]["mc_variance"]
            > res.estimators["aipw"]["mc_variance"])


# ---------------------------------------------------------------------------
# 7. double robustness: one wrong nuisance leaves the bias negligible


def test_double_robustness_single_misspecification(bench2_misspecified_run):
    res = bench2_misspecified_run
    assert not res.failed
    for name in ("bad_outcome", "bad_propensity"):
        stats = res.estimators[name]
        mc_se_of_bias = np.sqrt(stats["mc_variance"] / res.reps)
        assert abs(stats["mean_bias"]) <= 2.0 * mc_se_of_bias, name


# ---------------------------------------------------------------------------
# 8. undersmoothing improves balance and pushes n*variance to the bound


def test_undersmoothing_improves_balance_then_efficiency(
        bench2_undersmoothing_run):
    res = bench2_undersmoothing_run
    assert not res.failed
    cv = res.estimators["cv"]
    us = res.estimators["us"]
    assert us["mean_abs_dcar"] < cv["mean_abs_dcar"]
    bound = res.eff_bound
    assert (abs(us["n_times_variance"] - bound)
            < abs(cv["n_times_variance"] - bound))


# ---------------------------------------------------------------------------
# 9. penalized logistic fit matches a brute-force minimizer


def brute_force_l1(D, y, lam, rng):
    n, m = D.shape

    def objective(theta):
        eta = theta[0] + D @ theta[1:]
        nll = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
        return nll + lam * float(np.abs(theta[1:]).sum())

    best = None
    starts = [np.zeros(m + 1)]
    starts += [rng.normal(scale=0.5, size=m + 1) for _ in range(5)]
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14,
                                "maxiter": 30000, "maxfev": 30000})
        if best is None or res.fun < best:
            best = float(res.fun)
    return best


def test_l1_objective_within_tolerance_of_brute_force():
    rng = np.random.default_rng(303)
    for _ in range(20):
        n = int(rng.integers(15, 31))
        m = int(rng.integers(1, 4))
        D = rng.normal(size=(n, m))
        y = (rng.uniform(size=n) < expit(D @ rng.normal(scale=0.8, size=m))
             ).astype(float)
        if y.min() == y.max():
            y[0] = 1.0 - y[0]
        lam = float(rng.uniform(0.02, 0.2))
        fit = fit_logistic_l1(D, y, lam)
        ours = penalized_objective(fit, D, y)
        oracle = brute_force_l1(D, y, lam, rng)
        assert ours <= oracle + 1e-8


# ---------------------------------------------------------------------------
# 10. CLI determinism: byte-identical JSON across runs and worker counts


def test_cli_reports_byte_identical(tmp_path):
    rng = np.random.default_rng(404)
    n = 150
    X = rng.normal(size=(n, 2))
    z = (rng.uniform(size=n) < expit(X[:, 0])).astype(float)
    r = z * (1.0 + X[:, 0]) + rng.normal(size=n)
    data_path = tmp_path / "data.csv"
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "z", "r"])
        w.writerows(np.column_stack([X, z, r]).tolist())

    estimate_cfg = tmp_path / "estimate.json"
    estimate_cfg.write_text(json.dumps({
        "input": str(data_path), "treatment_col": "z", "response_col": "r",
        "estimators": ["aipw", "tmle"], "seed": 5,
        "propensity": {"kind": "parametric-logistic"},
        "outcome": {"kind": "linear"},
    }))
    balance_cfg = tmp_path / "balance.json"
    balance_cfg.write_text(json.dumps({
        "input": str(data_path), "treatment_col": "z", "response_col": "r",
        "seed": 5, "propensity": {"kind": "parametric-logistic"},
        "outcome": {"kind": "linear"},
    }))
    simulate_cfg = tmp_path / "simulate.json"

    def simulate_payload(workers):
        return json.dumps({
            "dgp": "bench1", "n": 80, "reps": 6, "seed": 5,
            "workers": workers,
            "estimators": [{"name": "aipw", "estimator": "aipw",
                            "propensity": "parametric", "outcome": "linear"}],
        })

    runs = [
        ("estimate", estimate_cfg, "estimate_report.json", None),
        ("balance", balance_cfg, "balance_report.json", None),
        ("simulate", simulate_cfg, "simulate_report.json", (1, 2)),
    ]
    for command, cfg, report_name, worker_pair in runs:
        payloads = []
        for i in range(2):
            if worker_pair is not None:
                cfg.write_text(simulate_payload(worker_pair[i]))
            out = tmp_path / f"{command}_{i}"
            code = cli_main([command, "--config", str(cfg),
                             "--output", str(out), "--quiet"])
            assert code == 0, command
            payloads.append((out / report_name).read_bytes())
            if command == "simulate":
                payloads.append((out / "simulate_draws.csv").read_bytes())
        assert payloads[0::2][0] == payloads[0::2][-1], command
        if command == "simulate":
            assert payloads[1] == payloads[3]
