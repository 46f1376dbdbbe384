"""Shared fixtures: tiny hand-checkable datasets and helpers."""

import numpy as np
import pytest

from balancekit.dataset import Dataset, from_arrays
from balancekit.nuisance import OutcomeModel, PropensityModel


@pytest.fixture
def d4():
    """Four rows with binary X: X=(0,0,1,1), Z=(1,0,1,0), R=(3,1,5,3).

    Per-cell response means: (z=1,x=0)->3, (z=0,x=0)->1, (z=1,x=1)->5,
    (z=0,x=1)->3. The treated counterfactual mean under the saturated
    outcome fit is mean(3,3,5,5) = 4.
    """
    return from_arrays(
        covariates=np.array([0.0, 0.0, 1.0, 1.0]),
        treatment=np.array([1.0, 0.0, 1.0, 0.0]),
        response=np.array([3.0, 1.0, 5.0, 3.0]),
    )


@pytest.fixture
def d4_nuisances(d4):
    """Saturated outcome model and the exact e = 0.5 propensity for d4."""
    q1 = np.array([3.0, 3.0, 5.0, 5.0])
    q0 = np.array([1.0, 1.0, 3.0, 3.0])
    outcome = OutcomeModel.from_predictions(q1=q1, q0=q0, kind="saturated")
    propensity = PropensityModel.from_scores(np.full(4, 0.5))
    return propensity, outcome


def make_logistic_data(rng, n=200, p=2, beta=None):
    """Simple correctly specified logistic DGP for fitting tests."""
    X = rng.normal(size=(n, p))
    if beta is None:
        beta = np.linspace(0.5, -0.5, p)
    eta = X @ beta
    z = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if z.min() == z.max():
        z[0] = 1.0 - z[0]
    r = z * X[:, 0] + rng.normal(size=n)
    return Dataset(
        covariates=X,
        treatment=z,
        response=r,
        covariate_names=tuple(f"x{j + 1}" for j in range(p)),
    )
