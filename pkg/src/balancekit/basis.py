"""Zero-order spline (indicator) design for sieve estimation.

Columns are products of 1(x_s >= knot_s) over a covariate subset, with
knots placed at observed values (or at quantiles when thinning is
requested). The sum of absolute non-intercept coefficients of a fit on
this design is the sectional variation norm of the fitted function.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Optional, Tuple

import numpy as np

from .dataset import Dataset
from .errors import DataError


@dataclass(frozen=True)
class BasisSpec:
    """Configuration of the indicator basis.

    knot_strategy is either "all-observed" (joint observed values per
    covariate subset, the nonparametric-MLE convention) or
    ("quantile", k) with k >= 2 marginal quantile knots per covariate.
    """

    max_interaction_degree: int = 2
    knot_strategy: object = "all-observed"
    include_intercept: bool = True  # always true; kept for provenance

    def __post_init__(self):
        if self.max_interaction_degree < 1:
            raise DataError("max_interaction_degree must be >= 1")
        if isinstance(self.knot_strategy, tuple):
            kind, k = self.knot_strategy
            if kind != "quantile" or int(k) < 2:
                raise DataError(f"bad knot_strategy {self.knot_strategy!r}")
        elif self.knot_strategy != "all-observed":
            raise DataError(f"bad knot_strategy {self.knot_strategy!r}")


@dataclass(frozen=True)
class BasisExpansion:
    """Materialized indicator design with its coefficient-to-knot map.

    ``design`` is n x (m + 1) with the intercept (all ones) first;
    ``terms[j]`` describes design column j + 1 as a pair
    (covariate index tuple, knot value tuple).
    """

    design: np.ndarray
    terms: Tuple[Tuple[Tuple[int, ...], Tuple[float, ...]], ...]
    source_spec: BasisSpec
    p: int

    @property
    def m(self) -> int:
        return len(self.terms)


def _candidate_knots(X: np.ndarray, spec: BasisSpec, subset: Tuple[int, ...]):
    """Knot vectors for one covariate subset, sorted for determinism."""
    if spec.knot_strategy == "all-observed":
        rows = {tuple(float(v) for v in X[i, subset]) for i in range(X.shape[0])}
        return sorted(rows)
    _, k = spec.knot_strategy
    qs = np.linspace(0.0, 1.0, int(k))
    marginals = []
    for s in subset:
        vals = np.unique(np.quantile(X[:, s], qs, method="lower"))
        marginals.append([float(v) for v in vals])
    return sorted(product(*marginals))


def build_basis(data: Dataset, spec: BasisSpec) -> BasisExpansion:
    """Construct the deduplicated indicator design for a dataset.

    Column order is deterministic: by interaction degree, then covariate
    indices, then knot values. Columns whose 0/1 pattern duplicates an
    earlier column (or the intercept) are dropped.
    """
    X = data.covariates
    n, p = X.shape
    if spec.max_interaction_degree > p:
        raise DataError(
            f"max_interaction_degree {spec.max_interaction_degree} exceeds p={p}"
        )
    columns = [np.ones(n)]
    terms = []
    seen = {columns[0].tobytes()}
    for degree in range(1, spec.max_interaction_degree + 1):
        for subset in combinations(range(p), degree):
            for knots in _candidate_knots(X, spec, subset):
                col = np.ones(n)
                for s, t in zip(subset, knots):
                    col *= (X[:, s] >= t).astype(float)
                key = col.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                columns.append(col)
                terms.append((subset, tuple(knots)))
    design = np.column_stack(columns)
    design.setflags(write=False)
    return BasisExpansion(
        design=design, terms=tuple(terms), source_spec=spec, p=p
    )


def evaluate_basis(expansion: BasisExpansion, new_covariates) -> np.ndarray:
    """Evaluate the stored terms on new rows (intercept included).

    No new knots are introduced; points left of every knot map to the
    all-zero row (intercept aside), points right of every knot to all
    ones.
    """
    Xn = np.asarray(new_covariates, dtype=float)
    if Xn.ndim == 1:
        Xn = Xn.reshape(-1, 1)
    if Xn.shape[1] != expansion.p:
        raise DataError(
            f"covariate count {Xn.shape[1]} does not match training p={expansion.p}"
        )
    q = Xn.shape[0]
    out = np.ones((q, expansion.m + 1))
    for j, (subset, knots) in enumerate(expansion.terms):
        col = np.ones(q)
        for s, t in zip(subset, knots):
            col *= (Xn[:, s] >= t).astype(float)
        out[:, j + 1] = col
    return out


def sectional_variation_norm(fit) -> float:
    """Sum of absolute non-intercept coefficients of a fitted model."""
    coefs = np.asarray(fit.coefficients, dtype=float)
    if fit.has_intercept:
        coefs = coefs[1:]
    return float(np.abs(coefs).sum())
