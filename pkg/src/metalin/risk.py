"""Meta-test risk, its exact decomposition, and Monte-Carlo adapted test loss.

Expectations over tasks are taken against a finite task pool.  Because the
population-optimal initialization is defined against the same pool, the
decomposition

    risk(theta0_hat) = risk(theta0_star) + ||theta0_hat - theta0_star||^2_{mean W}

is an exact algebraic identity here, not a Monte-Carlo approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import BaMAML, BaseMetaLearner, optimal_theta0
from .numerics import gaussian_matrix
from .tasks import TaskSpec, stack_tasks


@dataclass(frozen=True)
class RiskReport:
    """Decomposed meta-test risk of a fitted initialization."""

    optimal_population_risk: float
    statistical_error: float
    total_risk: float
    method: dict
    theta0_hat: np.ndarray
    theta0_star: np.ndarray


def population_risk(
    estimator: BaseMetaLearner, theta0, tasks: list[TaskSpec], split_ratio: float = 0.5
) -> float:
    """Task-averaged weighted quadratic risk plus the unit noise floor."""
    estimator._check_params()
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta, q, _ = stack_tasks(tasks)
    w = estimator._population_weight_stack(q, split_ratio)
    diffs = theta0[None, :] - theta
    quad = np.einsum("ti,tij,tj->t", diffs, w, diffs)
    return float(np.add.reduce(quad) / len(tasks) + 1.0)


def statistical_error(
    estimator: BaseMetaLearner,
    theta0_hat,
    theta0_star,
    tasks: list[TaskSpec],
    split_ratio: float = 0.5,
) -> float:
    """Squared displacement of the fit from the pool optimum, weighted by mean W."""
    estimator._check_params()
    delta = np.asarray(theta0_hat, dtype=np.float64) - np.asarray(theta0_star, dtype=np.float64)
    _, q, _ = stack_tasks(tasks)
    w = estimator._population_weight_stack(q, split_ratio)
    mean_w = np.add.reduce(w, axis=0) / len(tasks)
    return float(delta @ mean_w @ delta)


def decompose(
    estimator: BaseMetaLearner,
    datasets,
    tasks: list[TaskSpec],
    split_ratio: float | None = None,
) -> RiskReport:
    """Fit on the datasets, locate the pool optimum, and report the risk split.

    ``split_ratio`` defaults to the datasets' own train fraction.
    """
    if split_ratio is None:
        split_ratio = datasets[0].split_ratio
    estimator.fit(datasets)
    theta0_hat = estimator.theta0_
    theta0_star = optimal_theta0(estimator, tasks, split_ratio)
    total = population_risk(estimator, theta0_hat, tasks, split_ratio)
    optimal = population_risk(estimator, theta0_star, tasks, split_ratio)
    stat = statistical_error(estimator, theta0_hat, theta0_star, tasks, split_ratio)
    method = {"method": estimator.method, **estimator.get_params()}
    return RiskReport(
        optimal_population_risk=optimal,
        statistical_error=stat,
        total_risk=total,
        method=method,
        theta0_hat=theta0_hat,
        theta0_star=theta0_star,
    )


def adapted_test_loss(
    estimator: BaseMetaLearner,
    theta0,
    task: TaskSpec,
    rng: np.random.Generator,
    n_adapt: int,
    n_test: int,
    loss: str = "squared",
) -> float:
    """Simulate one adapt-then-test round on a task and return the test loss.

    Draws ``n_adapt`` fresh points to adapt on and ``n_test`` fresh points to
    score; the expectation of the squared-error mode over tasks and draws is
    the meta-test risk (up to terms vanishing in ``n_adapt``).  ``loss`` may
    be ``"squared"`` or, for the Bayesian learner, ``"nll"`` to score the
    Gaussian posterior predictive density instead of its mean.
    """
    if loss not in ("squared", "nll"):
        raise ValueError(f"loss must be 'squared' or 'nll', got {loss!r}")
    theta0 = np.asarray(theta0, dtype=np.float64)
    d = task.dim
    x_adapt = gaussian_matrix(rng, n_adapt, d, task.Q)
    y_adapt = x_adapt @ task.theta_gt + task.noise_sigma * rng.standard_normal(n_adapt)
    x_test = gaussian_matrix(rng, n_test, d, task.Q)
    y_test = x_test @ task.theta_gt + task.noise_sigma * rng.standard_normal(n_test)

    if loss == "nll":
        if not isinstance(estimator, BaMAML):
            raise ValueError("nll scoring is only defined for the Bayesian learner")
        post = estimator.posterior(x_adapt, y_adapt, theta0)
        mean = x_test @ post.mean
        var = 1.0 + np.einsum("ni,ij,nj->n", x_test, post.cov, x_test)
        return float(np.mean(0.5 * (np.log(2.0 * np.pi * var) + (y_test - mean) ** 2 / var)))

    theta = estimator.adapt(x_adapt, y_adapt, theta0)
    residual = y_test - x_test @ theta
    return float(np.mean(residual**2))
