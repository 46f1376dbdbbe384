"""Observational data container: ingestion, validation, response scaling.

The package-wide tabular substrate is an immutable triplet
(covariates, treatment, response) with named covariate columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class Dataset:
    """n observations of (covariate vector, binary treatment, response).

    ``response_bounds`` records the original (min, max) whenever the
    response has been affinely mapped to [0, 1]; ``None`` means the
    response is on its original scale.
    """

    covariates: np.ndarray          # n x p, float
    treatment: np.ndarray           # n, values in {0, 1}
    response: np.ndarray            # n, float
    covariate_names: Tuple[str, ...]
    response_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        z = np.asarray(self.treatment, dtype=float)
        r = np.asarray(self.response, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n = X.shape[0]
        if z.shape != (n,) or r.shape != (n,):
            raise DataError(
                f"component lengths differ: covariates {n}, "
                f"treatment {z.shape[0]}, response {r.shape[0]}"
            )
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        if len(self.covariate_names) != X.shape[1]:
            raise DataError("covariate_names length does not match p")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite value in covariates")
        if not np.all(np.isfinite(r)):
            raise DataError("non-finite value in response")
        if not np.all(np.isin(z, (0.0, 1.0))):
            bad = int(np.flatnonzero(~np.isin(z, (0.0, 1.0)))[0])
            raise DataError(f"treatment value outside {{0,1}} at row {bad}")
        if z.min() == z.max():
            raise DataError("single treatment arm: both 0 and 1 must be present")
        for arr in (X, z, r):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", z)
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class ValidationReport:
    n: int
    p: int
    n_treated: int
    n_control: int
    constant_columns: Tuple[str, ...]
    warnings: Tuple[str, ...] = field(default_factory=tuple)


def load_csv(path, treatment_col: str, response_col: str) -> Dataset:
    """Read an RFC-4180-style CSV (header row, '.' decimals) into a Dataset.

    All columns other than ``treatment_col`` and ``response_col`` become
    covariates, in header order. Unparseable cells and out-of-domain
    treatment values are reported with their row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    for name in (treatment_col, response_col):
        if name not in header:
            raise DataError(f"{path}: column '{name}' not found in header")
    z_idx = header.index(treatment_col)
    r_idx = header.index(response_col)
    cov_idx = [j for j in range(len(header)) if j not in (z_idx, r_idx)]
    cov_names = [header[j] for j in cov_idx]

    parsed = np.empty((len(rows), len(header)), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}"
            )
        for j, cell in enumerate(row):
            try:
                parsed[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: unparseable value '{cell}' at row {i + 2}, "
                    f"column '{header[j]}'"
                ) from None

    z = parsed[:, z_idx]
    bad = np.flatnonzero(~np.isin(z, (0.0, 1.0)))
    if bad.size:
        raise DataError(
            f"{path}: treatment value {z[bad[0]]} outside {{0,1}} "
            f"at row {int(bad[0]) + 2}"
        )
    return Dataset(
        covariates=parsed[:, cov_idx],
        treatment=z,
        response=parsed[:, r_idx],
        covariate_names=tuple(cov_names),
    )


def validate(data: Dataset) -> ValidationReport:
    """Structural checks: arm counts and constant-column warnings.

    Degenerate arms and non-finite values are hard errors (already
    enforced at construction); constant covariates are warnings only.
    """
    z = data.treatment
    n_treated = int(z.sum())
    constant = tuple(
        name
        for j, name in enumerate(data.covariate_names)
        if data.covariates[:, j].min() == data.covariates[:, j].max()
    )
    warns = tuple(f"constant covariate column '{c}'" for c in constant)
    return ValidationReport(
        n=data.n,
        p=data.p,
        n_treated=n_treated,
        n_control=data.n - n_treated,
        constant_columns=constant,
        warnings=warns,
    )


def scale_response(data: Dataset) -> Dataset:
    """Map the response affinely onto [0, 1], recording the original bounds.

    Idempotent: already-scaled data (bounds recorded) is returned as-is.
    """
    if data.response_bounds is not None:
        return data
    lo = float(data.response.min())
    hi = float(data.response.max())
    if lo == hi:
        raise DataError("constant response: cannot scale to [0, 1]")
    scaled = (data.response - lo) / (hi - lo)
    return Dataset(
        covariates=data.covariates,
        treatment=data.treatment,
        response=scaled,
        covariate_names=data.covariate_names,
        response_bounds=(lo, hi),
    )


def unscale_response(data: Dataset) -> Dataset:
    """Invert scale_response using the recorded bounds."""
    if data.response_bounds is None:
        return data
    lo, hi = data.response_bounds
    return Dataset(
        covariates=data.covariates,
        treatment=data.treatment,
        response=data.response * (hi - lo) + lo,
        covariate_names=data.covariate_names,
        response_bounds=None,
    )


def from_arrays(
    covariates,
    treatment,
    response,
    names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Convenience constructor with auto-generated column names x1..xp."""
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return Dataset(
        covariates=X,
        treatment=np.asarray(treatment, dtype=float),
        response=np.asarray(response, dtype=float),
        covariate_names=tuple(names),
    )
