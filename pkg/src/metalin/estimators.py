"""Closed-form meta linear regression learners with a scikit-learn style API.

Each learner owns three pieces of machinery:

* a population weight matrix ``W(Q)`` that turns the meta-test risk into the
  task-averaged quadratic form ``E[(theta0 - theta_gt)' W (theta0 - theta_gt)] + 1``;
* an empirical weight matrix built from a task's sampled covariances, plus the
  matching right-hand side, so that ``fit`` reduces to one SPD solve of the
  stacked normal equations -- no iterative optimizer is ever involved;
* a per-task adaptation rule mapping the shared initialization ``theta0_``
  and a support set to task-specific parameters.

The weight matrices per method (``s`` is the train fraction, ``Qh`` a sample
second-moment matrix over the subscripted split):

=========  ==========================================  =========================================================
method     population W(Q)                             empirical W
=========  ==========================================  =========================================================
erm        Q                                           Qh_all
maml       (I - aQ) Q (I - aQ)                         (I - a Qh_trn) Qh_val (I - a Qh_trn)
imaml      (Q/g + I)^-1 Q (Q/g + I)^-1                 g^2 S Qh_val S,  S = (Qh_trn + g I)^-1
bamaml     (Q/(sg) + I)^-1 Q (Q/g + I)^-1              (Qh_all/(sg) + I)^-1 Qh_val (Qh_trn/g + I)^-1
=========  ==========================================  =========================================================

For bamaml the validation covariance is reconstructed as
``(N Qh_all - N1 Qh_trn) / N2`` so the algebraic relation between the three
split covariances holds exactly, and its N x N marginal-likelihood solves are
reduced to d x d systems through ``X' (I + X X'/gb)^-1 = (I + X'X/gb)^-1 X'``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import DegenerateTaskPoolError, NotPositiveDefiniteError, UnderdeterminedError
from .numerics import check_spd, chol_solve_stack, gram_stack, spd_solve, symmetrize, xty_stack
from .tasks import stack_datasets, stack_tasks


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian posterior over a task's parameters."""

    mean: np.ndarray
    cov: np.ndarray


def gaussian_posterior(theta0, x, y, prior_precision: float) -> GaussianPosterior:
    """Posterior of a linear-Gaussian model under the prior N(theta0, I / prior_precision).

    cov = (X'X + gb I)^-1 and mean = cov @ (X'y + gb theta0), unit noise.
    """
    if prior_precision <= 0.0:
        raise ValueError(f"prior precision must be positive, got {prior_precision}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta0 = np.asarray(theta0, dtype=np.float64)
    d = x.shape[1]
    precision = x.T @ x + prior_precision * np.eye(d)
    cov = spd_solve(precision, np.eye(d))
    mean = spd_solve(precision, x.T @ y + prior_precision * theta0)
    return GaussianPosterior(mean=mean, cov=symmetrize(cov))


class BaseMetaLearner(BaseEstimator):
    """Shared fitting, adaptation and weight plumbing; subclasses fill the math."""

    method = ""

    def _check_params(self):
        pass

    # -- subclass hooks, all batched over a leading task axis ----------------

    def _population_weight_stack(self, q: np.ndarray, s: float) -> np.ndarray:
        raise NotImplementedError

    def _empirical_weight_stack(self, x_trn: np.ndarray, x_val: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _empirical_system(self, x1, y1, x2, y2) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(W, rhs)`` stacks such that ``sum(W) theta0 = sum(rhs)``."""
        raise NotImplementedError

    def _adapt(self, x, y, theta0) -> np.ndarray:
        raise NotImplementedError

    def empirical_loss(self, theta0, datasets) -> float:
        """Value of the meta-training objective at ``theta0`` (up to an additive constant).

        ``fit`` never calls this; it exists so the closed-form solution can be
        validated against direct minimization.
        """
        raise NotImplementedError

    # -- public API -----------------------------------------------------------

    def fit(self, datasets):
        """Solve the method's normal equations over the given task datasets.

        Sets ``theta0_``.  Raises :class:`UnderdeterminedError` when the
        aggregate weight matrix is singular (too few tasks or data points).
        """
        self._check_params()
        x1, y1, x2, y2 = stack_datasets(datasets)
        n_tasks, n1, d = x1.shape
        n2 = x2.shape[1]
        weights, rhs = self._empirical_system(x1, y1, x2, y2)
        a = np.add.reduce(weights, axis=0)
        b = np.add.reduce(rhs, axis=0)
        try:
            theta0 = spd_solve(a, b)
        except NotPositiveDefiniteError as exc:
            raise UnderdeterminedError(
                f"{self.method}: aggregate weight matrix is singular at "
                f"T={n_tasks}, N1={n1}, N2={n2}, d={d}; more tasks or data are required"
            ) from exc
        self.theta0_ = theta0
        self.n_features_in_ = d
        self.n_tasks_ = n_tasks
        return self

    def adapt(self, x, y, theta0=None) -> np.ndarray:
        """Task-specific parameters from a support set ``(x, y)``."""
        self._check_params()
        theta0 = self._resolve_theta0(theta0)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"support design matrix must be non-empty 2-d, got shape {x.shape}")
        return self._adapt(x, y, theta0)

    def predict(self, x, adapt_x=None, adapt_y=None, theta0=None) -> np.ndarray:
        """Predict targets for ``x``, adapting on ``(adapt_x, adapt_y)`` first if given."""
        x = np.asarray(x, dtype=np.float64)
        if adapt_x is not None:
            theta = self.adapt(adapt_x, adapt_y, theta0)
        else:
            theta = self._resolve_theta0(theta0)
        return x @ theta

    def population_weight(self, q, split_ratio: float = 0.5) -> np.ndarray:
        """Population weight matrix for a task with feature covariance ``q``."""
        self._check_params()
        q = check_spd(q)
        return symmetrize(self._population_weight_stack(q[None], split_ratio)[0])

    def empirical_weight(self, dataset) -> np.ndarray:
        """Empirical weight matrix of one task dataset."""
        self._check_params()
        w = self._empirical_weight_stack(dataset.X_trn[None], dataset.X_val[None])[0]
        return symmetrize(w)

    def _resolve_theta0(self, theta0):
        if theta0 is not None:
            return np.asarray(theta0, dtype=np.float64)
        if not hasattr(self, "theta0_"):
            raise NotFittedError(
                f"{type(self).__name__} is not fitted; call fit or pass theta0 explicitly"
            )
        return self.theta0_


class ERM(BaseMetaLearner):
    """Pooled least squares over all data of all tasks; no adaptation."""

    method = "erm"

    def _population_weight_stack(self, q, s):
        return q.copy()

    def _empirical_weight_stack(self, x_trn, x_val):
        n = x_trn.shape[1] + x_val.shape[1]
        return (x_trn.shape[1] * gram_stack(x_trn) + x_val.shape[1] * gram_stack(x_val)) / n

    def _empirical_system(self, x1, y1, x2, y2):
        n = x1.shape[1] + x2.shape[1]
        weights = self._empirical_weight_stack(x1, x2)
        rhs = (xty_stack(x1, y1) + xty_stack(x2, y2)) / n
        return weights, rhs

    def _adapt(self, x, y, theta0):
        return theta0.copy()

    def empirical_loss(self, theta0, datasets):
        x1, y1, x2, y2 = stack_datasets(datasets)
        theta0 = np.asarray(theta0, dtype=np.float64)
        r1 = y1 - x1 @ theta0
        r2 = y2 - x2 @ theta0
        n_tasks, n1, _ = x1.shape
        return float((np.sum(r1 * r1) + np.sum(r2 * r2)) / (n_tasks * (n1 + x2.shape[1])))


class MAML(BaseMetaLearner):
    """One gradient step of the squared-error loss, scaled so the update is
    ``(I - alpha Qh_trn) theta0 + (alpha / N1) X_trn' y_trn``.

    The exposed hyperparameter ``alpha`` is twice the raw step size; the
    update multiplies the gradient by ``alpha / 2``, which cancels the factor
    2 from differentiating the square.
    """

    method = "maml"

    def __init__(self, alpha: float = 0.7):
        self.alpha = alpha

    def _check_params(self):
        if not np.isfinite(self.alpha) or self.alpha < 0.0:
            raise ValueError(f"alpha must be a finite non-negative real, got {self.alpha}")

    def _population_weight_stack(self, q, s):
        d = q.shape[-1]
        m = np.eye(d) - self.alpha * q
        return m @ q @ m

    def _empirical_weight_stack(self, x_trn, x_val):
        d = x_trn.shape[-1]
        m = np.eye(d) - self.alpha * gram_stack(x_trn)
        return m @ gram_stack(x_val) @ m

    def _empirical_system(self, x1, y1, x2, y2):
        d = x1.shape[-1]
        n1, n2 = x1.shape[1], x2.shape[1]
        q1 = gram_stack(x1)
        q2 = gram_stack(x2)
        m = np.eye(d) - self.alpha * q1
        weights = m @ q2 @ m
        inner = xty_stack(x2, y2) / n2 - (self.alpha / n1) * np.einsum(
            "tij,tj->ti", q2, xty_stack(x1, y1)
        )
        rhs = np.einsum("tij,tj->ti", m, inner)
        return weights, rhs

    def _adapt(self, x, y, theta0):
        n = x.shape[0]
        q = x.T @ x / n
        return theta0 - self.alpha * (q @ theta0) + (self.alpha / n) * (x.T @ y)

    def empirical_loss(self, theta0, datasets):
        x1, y1, x2, y2 = stack_datasets(datasets)
        theta0 = np.asarray(theta0, dtype=np.float64)
        n_tasks, n1, d = x1.shape
        q1 = gram_stack(x1)
        adapted = (
            theta0
            - self.alpha * np.einsum("tij,j->ti", q1, theta0)
            + (self.alpha / n1) * xty_stack(x1, y1)
        )
        r = y2 - np.einsum("tnd,td->tn", x2, adapted)
        return float(np.sum(r * r) / (n_tasks * x2.shape[1]))


class IMAML(BaseMetaLearner):
    """Adaptation by exactly minimizing the gamma-ridge-regularized task loss."""

    method = "imaml"

    def __init__(self, gamma: float = 0.1):
        self.gamma = gamma

    def _check_params(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise ValueError(f"gamma must be a finite positive real, got {self.gamma}")

    def _population_weight_stack(self, q, s):
        d = q.shape[-1]
        ridge = q / self.gamma + np.eye(d)
        fq = chol_solve_stack(ridge, q)
        return chol_solve_stack(ridge, np.swapaxes(fq, -1, -2))

    def _empirical_weight_stack(self, x_trn, x_val):
        d = x_trn.shape[-1]
        ridge = gram_stack(x_trn) + self.gamma * np.eye(d)
        sq = chol_solve_stack(ridge, gram_stack(x_val))
        return self.gamma**2 * chol_solve_stack(ridge, np.swapaxes(sq, -1, -2))

    def _empirical_system(self, x1, y1, x2, y2):
        d = x1.shape[-1]
        n1, n2 = x1.shape[1], x2.shape[1]
        q2 = gram_stack(x2)
        ridge = gram_stack(x1) + self.gamma * np.eye(d)
        sq = chol_solve_stack(ridge, q2)
        weights = self.gamma**2 * chol_solve_stack(ridge, np.swapaxes(sq, -1, -2))
        sv = chol_solve_stack(ridge, xty_stack(x1, y1) / n1)
        inner = xty_stack(x2, y2) / n2 - np.einsum("tij,tj->ti", q2, sv)
        rhs = self.gamma * chol_solve_stack(ridge, inner)
        return weights, rhs

    def _adapt(self, x, y, theta0):
        n, d = x.shape
        return spd_solve(x.T @ x / n + self.gamma * np.eye(d), x.T @ y / n + self.gamma * theta0)

    def empirical_loss(self, theta0, datasets):
        x1, y1, x2, y2 = stack_datasets(datasets)
        theta0 = np.asarray(theta0, dtype=np.float64)
        n_tasks, n1, d = x1.shape
        ridge = gram_stack(x1) + self.gamma * np.eye(d)
        adapted = chol_solve_stack(ridge, xty_stack(x1, y1) / n1 + self.gamma * theta0)
        r = y2 - np.einsum("tnd,td->tn", x2, adapted)
        return float(np.sum(r * r) / (n_tasks * x2.shape[1]))


class BaMAML(BaseMetaLearner):
    """Adaptation by the full Gaussian posterior with prior N(theta0, I / gb), gb = gamma * N1."""

    method = "bamaml"

    def __init__(self, gamma: float = 0.1):
        self.gamma = gamma

    def _check_params(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise ValueError(f"gamma must be a finite positive real, got {self.gamma}")

    def _population_weight_stack(self, q, s):
        if not 0.0 < s <= 1.0:
            raise ValueError(f"split ratio must lie in (0, 1], got {s}")
        d = q.shape[-1]
        ridge_all = q / (self.gamma * s) + np.eye(d)
        ridge_trn = q / self.gamma + np.eye(d)
        gq = chol_solve_stack(ridge_all, q)
        # (G Q) F with symmetric factors: solve F from the right via transposes
        w = np.swapaxes(chol_solve_stack(ridge_trn, np.swapaxes(gq, -1, -2)), -1, -2)
        return symmetrize(w)

    def _factors(self, x_trn, x_val):
        d = x_trn.shape[-1]
        n1, n2 = x_trn.shape[1], x_val.shape[1]
        n = n1 + n2
        s = n1 / n
        sum_trn = n1 * gram_stack(x_trn)
        q_all = (sum_trn + n2 * gram_stack(x_val)) / n
        q1 = sum_trn / n1
        # validation covariance reconstructed from the whole-sample one, so the
        # three split covariances satisfy their defining relation exactly
        q2 = (n * q_all - sum_trn) / n2
        ridge_all = q_all / (self.gamma * s) + np.eye(d)
        ridge_trn = q1 / self.gamma + np.eye(d)
        return q2, ridge_all, ridge_trn

    def _empirical_weight_stack(self, x_trn, x_val):
        q2, ridge_all, ridge_trn = self._factors(x_trn, x_val)
        gq = chol_solve_stack(ridge_all, q2)
        w = np.swapaxes(chol_solve_stack(ridge_trn, np.swapaxes(gq, -1, -2)), -1, -2)
        return symmetrize(w)

    def _empirical_system(self, x1, y1, x2, y2):
        n2 = x2.shape[1]
        q2, ridge_all, ridge_trn = self._factors(x1, x2)
        gq = chol_solve_stack(ridge_all, q2)
        weights = symmetrize(
            np.swapaxes(chol_solve_stack(ridge_trn, np.swapaxes(gq, -1, -2)), -1, -2)
        )
        v_trn = xty_stack(x1, y1)
        v_all = v_trn + xty_stack(x2, y2)
        rhs = (chol_solve_stack(ridge_all, v_all) - chol_solve_stack(ridge_trn, v_trn)) / n2
        return weights, rhs

    def _adapt(self, x, y, theta0):
        return self.posterior(x, y, theta0).mean

    def posterior(self, x, y, theta0=None) -> GaussianPosterior:
        """Gaussian posterior over task parameters given a support set."""
        self._check_params()
        theta0 = self._resolve_theta0(theta0)
        x = np.asarray(x, dtype=np.float64)
        return gaussian_posterior(theta0, x, np.asarray(y, dtype=np.float64), self.gamma * x.shape[0])

    def empirical_loss(self, theta0, datasets):
        """Negative log marginal likelihood of the validation splits, up to a constant.

        Each quadratic form ``r' (I + X X'/gb)^-1 r`` is evaluated through the
        d x d system ``r'r - (X'r)' (gb I + X'X)^-1 (X'r)``.
        """
        x1, y1, x2, y2 = stack_datasets(datasets)
        theta0 = np.asarray(theta0, dtype=np.float64)
        n_tasks, n1, d = x1.shape
        n2 = x2.shape[1]
        gb = self.gamma * n1

        def neg_quad(x_stack, r_stack):
            xtr = np.einsum("tnd,tn->td", x_stack, r_stack)
            a = np.einsum("tni,tnj->tij", x_stack, x_stack) + gb * np.eye(d)
            sol = chol_solve_stack(a, xtr)
            return np.einsum("tn,tn->t", r_stack, r_stack) - np.einsum("td,td->t", xtr, sol)

        x_all = np.concatenate([x1, x2], axis=1)
        r_all = np.concatenate([y1, y2], axis=1) - np.einsum("tnd,d->tn", x_all, theta0)
        r_trn = y1 - np.einsum("tnd,d->tn", x1, theta0)
        total = np.sum(neg_quad(x_all, r_all)) - np.sum(neg_quad(x1, r_trn))
        return float(0.5 * total / (n_tasks * n2))


METHODS = {cls.method: cls for cls in (ERM, MAML, IMAML, BaMAML)}


def make_method(name: str, alpha: float | None = None, gamma: float | None = None):
    """Instantiate a learner by name, validating which hyperparameter it takes."""
    key = name.lower()
    if key not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {sorted(METHODS)}")
    if key == "erm":
        return ERM()
    if key == "maml":
        if alpha is None:
            raise ValueError("maml requires alpha")
        return MAML(alpha=alpha)
    if gamma is None:
        raise ValueError(f"{key} requires gamma")
    return METHODS[key](gamma=gamma)


def optimal_theta0(estimator: BaseMetaLearner, tasks, split_ratio: float = 0.5) -> np.ndarray:
    """Population-optimal initialization over a finite task pool.

    Solves ``mean(W_tau) theta = mean(W_tau theta_gt_tau)`` with the
    estimator's population weights; the pool stands in for the task
    distribution.
    """
    estimator._check_params()
    theta, q, _ = stack_tasks(tasks)
    w = estimator._population_weight_stack(q, split_ratio)
    n_tasks = theta.shape[0]
    mean_w = np.add.reduce(w, axis=0) / n_tasks
    mean_wt = np.add.reduce(np.einsum("tij,tj->ti", w, theta), axis=0) / n_tasks
    try:
        return spd_solve(mean_w, mean_wt)
    except NotPositiveDefiniteError as exc:
        raise DegenerateTaskPoolError(
            f"{estimator.method}: mean population weight over {n_tasks} tasks is singular"
        ) from exc
