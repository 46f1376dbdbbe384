"""Command-line interface: configs, reports, schemas, exit codes."""

import csv
import json
from importlib import resources

import jsonschema
import numpy as np
import pytest
from scipy.special import expit

from balancekit.cli import main


def schema(name):
    text = (resources.files("balancekit") / "schemas" /
            f"{name}.schema.json").read_text()
    return json.loads(text)


def write_csv(path, data_rows, header=("x1", "x2", "z", "r")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(data_rows)


@pytest.fixture
def confounded_csv(tmp_path):
    rng = np.random.default_rng(21)
    n = 300
    X = rng.normal(size=(n, 2))
    z = (rng.uniform(size=n) < expit(1.5 * X[:, 0])).astype(float)
    r = z * (1.0 + X[:, 0]) + rng.normal(size=n)
    path = tmp_path / "data.csv"
    write_csv(path, np.column_stack([X, z, r]).tolist())
    return str(path)


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run(command, config, out, seed=None, quiet=True):
    argv = [command, "--config", config, "--output", str(out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if quiet:
        argv.append("--quiet")
    return main(argv)


class TestEstimateCommand:
    def base_cfg(self, confounded_csv):
        return {
            "input": confounded_csv,
            "treatment_col": "z",
            "response_col": "r",
            "estimators": ["aipw", "tmle"],
            "propensity": {"kind": "parametric-logistic"},
            "outcome": {"kind": "linear"},
        }

    def test_success_and_schema(self, tmp_path, confounded_csv):
        cfg = write_config(tmp_path, "e.json", self.base_cfg(confounded_csv))
        out = tmp_path / "out"
        assert run("estimate", cfg, out) == 0
        report = json.loads((out / "estimate_report.json").read_text())
        jsonschema.Draft202012Validator(schema("estimate_report")).validate(report)
        assert set(report["estimators"]) == {"aipw", "tmle"}
        assert (out / "estimate_report.txt").read_text().startswith("estimator")

    def test_byte_identical_reruns(self, tmp_path, confounded_csv):
        cfg = write_config(tmp_path, "e.json", self.base_cfg(confounded_csv))
        outs = []
        for d in ("a", "b"):
            out = tmp_path / d
            assert run("estimate", cfg, out, seed=3) == 0
            outs.append((out / "estimate_report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_ate_estimand(self, tmp_path, confounded_csv):
        payload = self.base_cfg(confounded_csv)
        payload["estimand"] = "ate"
        payload["estimators"] = ["aipw"]
        cfg = write_config(tmp_path, "e.json", payload)
        out = tmp_path / "out"
        assert run("estimate", cfg, out) == 0
        report = json.loads((out / "estimate_report.json").read_text())
        assert report["estimand"] == "ate"

    def test_unknown_key_named(self, tmp_path, confounded_csv, capsys):
        payload = self.base_cfg(confounded_csv)
        payload["bandwith"] = 3
        cfg = write_config(tmp_path, "e.json", payload)
        assert run("estimate", cfg, tmp_path / "out") == 1
        assert "bandwith" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, confounded_csv, capsys):
        payload = self.base_cfg(confounded_csv)
        del payload["treatment_col"]
        cfg = write_config(tmp_path, "e.json", payload)
        assert run("estimate", cfg, tmp_path / "out") == 1
        assert "treatment_col" in capsys.readouterr().err

    def test_unknown_estimand(self, tmp_path, confounded_csv):
        payload = self.base_cfg(confounded_csv)
        payload["estimand"] = "median"
        cfg = write_config(tmp_path, "e.json", payload)
        assert run("estimate", cfg, tmp_path / "out") == 1

    def test_missing_input_file(self, tmp_path, confounded_csv):
        payload = self.base_cfg(confounded_csv)
        payload["input"] = str(tmp_path / "absent.csv")
        cfg = write_config(tmp_path, "e.json", payload)
        assert run("estimate", cfg, tmp_path / "out") == 1

    def test_numeric_failure_exit_two(self, tmp_path, capsys):
        # deterministic treatment given x1 separates the parametric fit
        rng = np.random.default_rng(22)
        x = rng.normal(size=60)
        z = (x > 0).astype(float)
        r = z + rng.normal(size=60)
        path = tmp_path / "sep.csv"
        write_csv(path, np.column_stack([x, x, z, r]).tolist())
        cfg = write_config(tmp_path, "e.json", {
            "input": str(path), "treatment_col": "z", "response_col": "r",
            "estimators": ["aipw"],
            "propensity": {"kind": "parametric-logistic"},
        })
        assert run("estimate", cfg, tmp_path / "out") == 2
        assert "numeric failure" in capsys.readouterr().err

    def test_config_file_missing(self, tmp_path):
        assert run("estimate", str(tmp_path / "nope.json"), tmp_path) == 1

    def test_config_invalid_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run("estimate", str(bad), tmp_path) == 1


class TestBalanceCommand:
    def cfg_for(self, confounded_csv, prop):
        return {
            "input": confounded_csv,
            "treatment_col": "z",
            "response_col": "r",
            "propensity": prop,
            "outcome": {"kind": "linear"},
        }

    def test_balanced_exit_zero(self, tmp_path, confounded_csv):
        cfg = write_config(tmp_path, "b.json", self.cfg_for(
            confounded_csv, {"kind": "parametric-logistic"}))
        out = tmp_path / "out"
        assert run("balance", cfg, out) == 0
        report = json.loads((out / "balance_report.json").read_text())
        jsonschema.Draft202012Validator(schema("balance_report")).validate(report)
        assert report["family_decision"] == "balanced"

    def test_rejected_exit_three(self, tmp_path, confounded_csv):
        # a fully shrunk fit leaves the confounder unbalanced
        cfg = write_config(tmp_path, "b.json", self.cfg_for(
            confounded_csv,
            {"kind": "hal-sieve", "selection": "fixed", "lambda": 1e9,
             "basis": {"max_interaction_degree": 1, "knot_strategy": 5}},
        ))
        out = tmp_path / "out"
        assert run("balance", cfg, out) == 3
        report = json.loads((out / "balance_report.json").read_text())
        jsonschema.Draft202012Validator(schema("balance_report")).validate(report)
        assert report["family_decision"] == "rejected"
        assert "x1" in report["rejected"]

    def test_unknown_direction_key(self, tmp_path, confounded_csv, capsys):
        payload = self.cfg_for(confounded_csv, {"kind": "parametric-logistic"})
        payload["directions"] = {"moments": 2}
        cfg = write_config(tmp_path, "b.json", payload)
        assert run("balance", cfg, tmp_path / "out") == 1
        assert "moments" in capsys.readouterr().err

    def test_unknown_user_column(self, tmp_path, confounded_csv):
        payload = self.cfg_for(confounded_csv, {"kind": "parametric-logistic"})
        payload["directions"] = {"user_columns": ["x9"]}
        cfg = write_config(tmp_path, "b.json", payload)
        assert run("balance", cfg, tmp_path / "out") == 1


class TestSimulateCommand:
    def base_cfg(self):
        return {
            "dgp": "bench1",
            "n": 80,
            "reps": 5,
            "seed": 13,
            "estimators": [
                {"name": "aipw", "estimator": "aipw",
                 "propensity": "parametric", "outcome": "linear"},
                {"name": "ipw", "estimator": "ipw", "propensity": "true",
                 "outcome": "linear", "hajek": True},
            ],
        }

    def test_success_schema_and_csv(self, tmp_path):
        cfg = write_config(tmp_path, "s.json", self.base_cfg())
        out = tmp_path / "out"
        assert run("simulate", cfg, out) == 0
        report = json.loads((out / "simulate_report.json").read_text())
        jsonschema.Draft202012Validator(schema("simulate_report")).validate(report)
        assert report["dgp"] == "bench1"
        with open(out / "simulate_draws.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["estimator", "replication", "point", "se",
                           "ci_lower", "ci_upper"]
        assert len(rows) == 1 + 5 * 2

    def test_draws_round_trip_exactly(self, tmp_path):
        cfg = write_config(tmp_path, "s.json", self.base_cfg())
        out = tmp_path / "out"
        run("simulate", cfg, out)
        report = json.loads((out / "simulate_report.json").read_text())
        with open(out / "simulate_draws.csv") as fh:
            rows = list(csv.DictReader(fh))
        pts = [float(r["point"]) for r in rows if r["estimator"] == "aipw"]
        assert report["estimators"]["aipw"]["mean_bias"] == pytest.approx(
            np.mean(pts) - report["tau0"], abs=1e-15
        )

    def test_worker_invariant_byte_identical(self, tmp_path, monkeypatch):
        outs = []
        for d, workers in (("a", 1), ("b", 2)):
            payload = self.base_cfg()
            payload["workers"] = workers
            cfg = write_config(tmp_path, f"s{d}.json", payload)
            out = tmp_path / d
            assert run("simulate", cfg, out) == 0
            outs.append(((out / "simulate_report.json").read_bytes(),
                         (out / "simulate_draws.csv").read_bytes()))
        assert outs[0] == outs[1]

    def test_thread_env_cap_does_not_change_output(self, tmp_path, monkeypatch):
        payload = self.base_cfg()
        payload["workers"] = 4
        cfg = write_config(tmp_path, "s.json", payload)
        monkeypatch.setenv("BALANCEKIT_THREADS", "1")
        out = tmp_path / "capped"
        assert run("simulate", cfg, out) == 0
        monkeypatch.delenv("BALANCEKIT_THREADS")
        out2 = tmp_path / "uncapped"
        assert run("simulate", cfg, out2) == 0
        assert ((out / "simulate_report.json").read_bytes()
                == (out2 / "simulate_report.json").read_bytes())

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path, "s.json", self.base_cfg())
        a, b = tmp_path / "a", tmp_path / "b"
        run("simulate", cfg, a, seed=13)
        run("simulate", cfg, b, seed=14)
        ra = json.loads((a / "simulate_report.json").read_text())
        rb = json.loads((b / "simulate_report.json").read_text())
        assert ra["seed"] == 13 and rb["seed"] == 14
        assert (ra["estimators"]["aipw"]["mean_bias"]
                != rb["estimators"]["aipw"]["mean_bias"])

    def test_inline_dgp(self, tmp_path):
        payload = self.base_cfg()
        payload["dgp"] = {
            "name": "inline",
            "covariates": [{"name": "x1", "family": "uniform"}],
            "propensity": {"link": "identity", "terms": [{"coef": 0.5}]},
            "outcome": {"base_terms": [],
                        "treated_terms": [{"coef": 1.0, "var": "x1"}],
                        "noise_sd": 1.0},
            "delta0": 0.5,
            "tau0": 0.5,
            "eff_bound": 2.0833333333333335,
        }
        cfg = write_config(tmp_path, "s.json", payload)
        out = tmp_path / "out"
        assert run("simulate", cfg, out) == 0
        report = json.loads((out / "simulate_report.json").read_text())
        assert report["dgp"] == "inline"

    def test_unknown_key(self, tmp_path, capsys):
        payload = self.base_cfg()
        payload["repetitions"] = 5
        cfg = write_config(tmp_path, "s.json", payload)
        assert run("simulate", cfg, tmp_path / "out") == 1
        assert "repetitions" in capsys.readouterr().err

    def test_unknown_dgp_name(self, tmp_path):
        payload = self.base_cfg()
        payload["dgp"] = "bench42"
        cfg = write_config(tmp_path, "s.json", payload)
        assert run("simulate", cfg, tmp_path / "out") == 1

    def test_all_reps_failing_exit_two(self, tmp_path, capsys):
        payload = self.base_cfg()
        payload["n"] = 2
        payload["estimators"] = [
            {"name": "a", "estimator": "aipw", "propensity": "parametric",
             "outcome": "constant"},
        ]
        payload["dgp"] = {
            "name": "tiny",
            "covariates": [{"name": "x1", "family": "uniform"}],
            "propensity": {"link": "identity", "terms": [{"coef": 0.5}]},
            "outcome": {"base_terms": [], "treated_terms": [], "noise_sd": 1.0},
            "delta0": 0.5,
            "tau0": 0.0,
            "eff_bound": 2.0,
        }
        cfg = write_config(tmp_path, "s.json", payload)
        assert run("simulate", cfg, tmp_path / "out") == 2
        assert "failure rate" in capsys.readouterr().err
