"""Counterfactual-mean and ATE estimation with score-equation balance diagnostics."""

from .balance import (
    BalanceReport,
    DirectionSet,
    balance_sweep,
    dcar_residual,
    default_directions,
    score_residual,
    score_residuals,
    score_test,
)
from .basis import BasisExpansion, BasisSpec, build_basis, evaluate_basis, sectional_variation_norm
from .dataset import Dataset, from_arrays, load_csv, scale_response, unscale_response, validate
from .effects import (
    EffectEstimate,
    estimate,
    estimate_aipw,
    estimate_ate,
    estimate_ipw,
    estimate_sub,
    estimate_targeted_ipw,
    estimate_tmle,
    infer,
)
from .errors import (
    BalancekitError,
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateDirectionError,
    SeparationError,
)
from .glm import GlmFit, fit_linear, fit_logistic, fit_logistic_l1, lambda_max, lambda_path
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
from .sim import (
    Dgp,
    EstimatorSpec,
    MonteCarloResult,
    dgp_from_dict,
    get_dgp,
    run_monte_carlo,
    sample,
    truth_and_bound,
)

__version__ = "0.1.0"
