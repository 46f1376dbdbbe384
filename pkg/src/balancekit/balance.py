"""Score-equation balance diagnostics for a fitted propensity score.

For a direction f, the empirical score residual (1/n) sum f(X_i)(Z_i -
e_n(X_i)) measures how much predictive signal about treatment remains in
f beyond the fitted score. Standardizing it yields a score test of the
offset-logistic null beta = 0; a family sweep applies the test across a
direction set with Bonferroni control.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .basis import BasisExpansion
from .dataset import Dataset
from .errors import DataError, DegenerateDirectionError
from .nuisance import OutcomeModel, PropensityModel

EIF_WEIGHT_NAME = "eif_weight"


@dataclass(frozen=True)
class DirectionSet:
    """Named functions of the covariates, materialized on the sample."""

    names: Tuple[str, ...]
    values: np.ndarray               # n x K, column k is direction names[k]
    dropped: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.names) != self.values.shape[1]:
            raise DataError("direction names and columns disagree")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite direction value")

    @classmethod
    def from_columns(cls, named: Dict[str, np.ndarray],
                     drop_constant: bool = True) -> "DirectionSet":
        keep_names, cols, dropped = [], [], []
        for name, col in named.items():
            col = np.asarray(col, dtype=float)
            if drop_constant and col.size and col.min() == col.max():
                dropped.append(name)
                continue
            keep_names.append(name)
            cols.append(col)
        if dropped:
            warnings.warn(
                f"dropped zero-variance directions: {', '.join(dropped)}"
            )
        values = (np.column_stack(cols) if cols
                  else np.empty((next(iter(named.values())).shape[0], 0)))
        return cls(names=tuple(keep_names), values=values, dropped=tuple(dropped))

    @classmethod
    def from_covariates(cls, data: Dataset, center: bool = False) -> "DirectionSet":
        X = data.covariates
        if center:
            X = X - X.mean(axis=0)
        return cls.from_columns(
            {name: X[:, j] for j, name in enumerate(data.covariate_names)}
        )

    def columns(self):
        return zip(self.names, self.values.T)


def default_directions(data: Dataset, propensity: PropensityModel,
                       outcome: Optional[OutcomeModel] = None,
                       basis: Optional[BasisExpansion] = None,
                       center: bool = False) -> DirectionSet:
    """Raw covariates + degree-1 basis columns + the EIF weight direction."""
    named: Dict[str, np.ndarray] = {}
    X = data.covariates
    mu = X.mean(axis=0) if center else np.zeros(data.p)
    for j, name in enumerate(data.covariate_names):
        named[name] = X[:, j] - mu[j]
    expansion = basis if basis is not None else propensity.basis
    if expansion is not None:
        for j, (subset, knots) in enumerate(expansion.terms):
            if len(subset) != 1:
                continue
            label = f"basis_x{subset[0] + 1}_ge_{knots[0]:g}"
            named[label] = expansion.design[:, j + 1]
    if outcome is not None:
        named[EIF_WEIGHT_NAME] = outcome.q1 / propensity.fitted_scores
    return DirectionSet.from_columns(named)


def score_residual(f_values, treatment, scores) -> float:
    """(1/n) sum f(X_i) (Z_i - e_n(X_i)) for one direction."""
    f = np.asarray(f_values, dtype=float)
    z = np.asarray(treatment, dtype=float)
    e = np.asarray(scores, dtype=float)
    return float(np.mean(f * (z - e)))


def score_residuals(data: Dataset, propensity: PropensityModel,
                    dirs: DirectionSet) -> Dict[str, float]:
    e = propensity.fitted_scores
    return {
        name: score_residual(col, data.treatment, e)
        for name, col in dirs.columns()
    }


def score_test(data: Dataset, propensity: PropensityModel, f_values):
    """Standardized score statistic and two-sided normal p-value.

    T = sqrt(n) * mean(s) / sd(s) with s_i = f(X_i)(Z_i - e_n(X_i)) and
    sd using divisor n - 1; the fitted score is treated as a fixed
    offset.
    """
    f = np.asarray(f_values, dtype=float)
    s = f * (data.treatment - propensity.fitted_scores)
    sd = float(np.std(s, ddof=1))
    if sd == 0.0:
        raise DegenerateDirectionError(
            "direction has zero sample variance of its score"
        )
    t = float(np.sqrt(data.n)) * float(np.mean(s)) / sd
    p = 2.0 * float(norm.sf(abs(t)))
    return t, p


@dataclass(frozen=True)
class BalanceReport:
    """Per-direction score diagnostics and the family-wise decision."""

    records: Tuple[dict, ...]        # sorted by |statistic| descending
    alpha: float
    family_decision: str             # "balanced" | "rejected"
    rejected: Tuple[str, ...]
    max_statistic: float
    max_direction: str
    degenerate: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "directions": [dict(rec) for rec in self.records],
            "family_decision": self.family_decision,
            "rejected": list(self.rejected),
            "alpha": self.alpha,
            "max_statistic": self.max_statistic,
            "max_direction": self.max_direction,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_text(self) -> str:
        width = max([len("direction")] + [len(r["name"]) for r in self.records])
        lines = [
            f"{'direction':<{width}}  {'residual':>12}  {'statistic':>10}  {'p_value':>9}",
            "-" * (width + 37),
        ]
        for rec in self.records:
            flag = " *" if rec["name"] in self.rejected else ""
            lines.append(
                f"{rec['name']:<{width}}  {rec['residual']:>12.6g}  "
                f"{rec['statistic']:>10.4f}  {rec['p_value']:>9.4g}{flag}"
            )
        lines.append(
            f"family decision: {self.family_decision} "
            f"(alpha={self.alpha}, Bonferroni over {len(self.records)})"
        )
        return "\n".join(lines)


def balance_sweep(data: Dataset, propensity: PropensityModel,
                  dirs: DirectionSet, alpha: float = 0.05) -> BalanceReport:
    """Score-test every direction; Bonferroni family decision at alpha."""
    if not (0.0 < alpha < 1.0):
        raise DataError(f"alpha {alpha} outside (0, 1)")
    records = []
    degenerate = []
    for name, col in sorted(dirs.columns(), key=lambda nc: nc[0]):
        try:
            t, p = score_test(data, propensity, col)
        except DegenerateDirectionError:
            degenerate.append(name)
            continue
        records.append({
            "name": name,
            "residual": score_residual(col, data.treatment,
                                       propensity.fitted_scores),
            "statistic": t,
            "p_value": p,
        })
    if not records:
        raise DataError("all directions degenerate: nothing to test")
    k = len(records)
    rejected = tuple(r["name"] for r in records if r["p_value"] < alpha / k)
    records.sort(key=lambda r: (-abs(r["statistic"]), r["name"]))
    return BalanceReport(
        records=tuple(records),
        alpha=alpha,
        family_decision="balanced" if not rejected else "rejected",
        rejected=rejected,
        max_statistic=abs(records[0]["statistic"]),
        max_direction=records[0]["name"],
        degenerate=tuple(degenerate),
    )


def dcar_residual(data: Dataset, propensity: PropensityModel,
                  outcome: OutcomeModel) -> float:
    """Efficiency-score residual: P_n [q1/e] (Z - e).

    Identical to the score residual at the EIF-weight direction.
    """
    e = propensity.fitted_scores
    return score_residual(outcome.q1 / e, data.treatment, e)
