"""Robust Bayesian multivariate regression and graphical modelling with sandwich mixtures."""

from .distributions import (
    AsymmetricLogPareto,
    BoxTruncatedMvn,
    LogParetoParams,
    OneSidedLogPareto,
    SymmetricLogPareto,
    ThinTail,
    lp_cdf,
    lp_density,
    lp_sample,
    lp_tail_prob,
    mixing_density,
    sample_inverse_wishart,
    sample_mvn,
    tmvn_chain,
    tmvn_sample,
)
from .exceptions import (
    CSMError,
    DegenerateCovarianceError,
    DomainError,
    NumericalError,
    PreconditionError,
    QuadratureError,
    SamplerError,
    UnsupportedOperationError,
)
from .model import (
    Dataset,
    ModelState,
    OutlierFrame,
    PriorConfig,
    conditional_loglik,
    marginal_correlation,
    precision_correlation_decomposition,
    residual_quadratic,
    sandwich_covariance,
)
from .sampler import ChainOutput, ModelKind, SamplerConfig, run_chain
from .estimator import CSMGraphicalModel, CSMRegressor
from .robustness import (
    LimitReport,
    bias_term,
    likelihood_limit_report,
    posterior_robustness_probe,
    scaled_likelihood,
    scaled_variance_limit,
)
from .simulation import (
    MetricReport,
    ScenarioSpec,
    compute_metrics,
    edge_detection,
    gen_graphical,
    gen_regression,
    outlier_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "AsymmetricLogPareto",
    "BoxTruncatedMvn",
    "LogParetoParams",
    "OneSidedLogPareto",
    "SymmetricLogPareto",
    "ThinTail",
    "lp_cdf",
    "lp_density",
    "lp_sample",
    "lp_tail_prob",
    "mixing_density",
    "sample_inverse_wishart",
    "sample_mvn",
    "tmvn_chain",
    "tmvn_sample",
    "CSMError",
    "DegenerateCovarianceError",
    "DomainError",
    "NumericalError",
    "PreconditionError",
    "QuadratureError",
    "SamplerError",
    "UnsupportedOperationError",
    "Dataset",
    "ModelState",
    "OutlierFrame",
    "PriorConfig",
    "conditional_loglik",
    "marginal_correlation",
    "precision_correlation_decomposition",
    "residual_quadratic",
    "sandwich_covariance",
    "ChainOutput",
    "ModelKind",
    "SamplerConfig",
    "run_chain",
    "CSMGraphicalModel",
    "CSMRegressor",
    "LimitReport",
    "bias_term",
    "likelihood_limit_report",
    "posterior_robustness_probe",
    "scaled_likelihood",
    "scaled_variance_limit",
    "MetricReport",
    "ScenarioSpec",
    "compute_metrics",
    "edge_detection",
    "gen_graphical",
    "gen_regression",
    "outlier_probabilities",
]
