"""Closed-form meta linear regression: learners, risk decomposition, and theory checks."""

from .constants import (
    ConstantEstimate,
    OrderingReport,
    asymptotic_constant,
    constant_ordering_check,
    dominating_constant_mc,
    erm_constant_exact,
    stieltjes,
    stieltjes_derivative,
    weight_scale,
)
from .estimators import (
    ERM,
    MAML,
    BaMAML,
    BaseMetaLearner,
    GaussianPosterior,
    IMAML,
    gaussian_posterior,
    make_method,
    optimal_theta0,
)
from .exceptions import (
    ConfigError,
    DegenerateTaskPoolError,
    InvalidDimensionError,
    InvalidSplitError,
    MetalinError,
    NotPositiveDefiniteError,
    UnderdeterminedError,
    UnsupportedRegimeError,
)
from .experiments import ExperimentConfig, ResultRow, write_csv
from .numerics import (
    check_spd,
    gaussian_matrix,
    make_rng,
    random_orthogonal,
    spd_solve,
    split_rng,
)
from .risk import RiskReport, adapted_test_loss, decompose, population_risk, statistical_error
from .tasks import (
    TaskDataset,
    TaskDistribution,
    TaskSpec,
    empirical_Q,
    sample_dataset,
    sample_datasets,
    sample_task,
    sample_tasks,
    split_sizes,
)
from .verify import run_verify

__version__ = "0.1.0"

__all__ = [
    "BaMAML",
    "BaseMetaLearner",
    "ConfigError",
    "ConstantEstimate",
    "DegenerateTaskPoolError",
    "ERM",
    "ExperimentConfig",
    "GaussianPosterior",
    "IMAML",
    "InvalidDimensionError",
    "InvalidSplitError",
    "MAML",
    "MetalinError",
    "NotPositiveDefiniteError",
    "OrderingReport",
    "ResultRow",
    "RiskReport",
    "TaskDataset",
    "TaskDistribution",
    "TaskSpec",
    "UnderdeterminedError",
    "UnsupportedRegimeError",
    "adapted_test_loss",
    "asymptotic_constant",
    "check_spd",
    "constant_ordering_check",
    "decompose",
    "dominating_constant_mc",
    "empirical_Q",
    "erm_constant_exact",
    "gaussian_matrix",
    "gaussian_posterior",
    "make_method",
    "make_rng",
    "optimal_theta0",
    "population_risk",
    "random_orthogonal",
    "run_verify",
    "sample_dataset",
    "sample_datasets",
    "sample_task",
    "sample_tasks",
    "spd_solve",
    "split_rng",
    "split_sizes",
    "statistical_error",
    "weight_scale",
    "write_csv",
]
