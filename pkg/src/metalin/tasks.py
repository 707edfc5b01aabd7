"""Synthetic task and dataset generation for meta linear regression.

Two regimes are supported:

* ``general`` -- each task gets a random diagonalizable covariance
  ``Q = V diag(lam) V.T`` sharing one rotation ``V`` across the distribution,
  with per-task eigenvalues and ground-truth parameters drawn uniformly.
* ``linear-centroid`` -- isotropic features (``Q = I``) and task parameters
  scattered around a shared centroid with covariance ``(spread^2 / d) I``.

Labels always follow ``y = X @ theta_gt + eps`` with unit Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidSplitError
from .numerics import gaussian_matrix, random_orthogonal

GENERAL = "general"
LINEAR_CENTROID = "linear-centroid"


@dataclass(frozen=True)
class TaskDistribution:
    """Parameters of a task distribution.

    Use the :meth:`general` / :meth:`linear_centroid` constructors rather than
    filling fields by hand; they draw the shared rotation and default the
    centroid consistently.
    """

    d: int
    regime: str
    theta_low: float = 0.0
    theta_high: float = 2.0
    lambda_low: float = 0.1
    lambda_high: float = 2.0
    shared_V: np.ndarray | None = None
    centroid: np.ndarray | None = None
    spread: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.regime not in (GENERAL, LINEAR_CENTROID):
            raise ValueError(f"unknown regime {self.regime!r}")
        if not 0.0 < self.lambda_low <= self.lambda_high:
            raise ValueError("eigenvalue bounds must satisfy 0 < low <= high")
        if self.regime == GENERAL and self.shared_V is None:
            raise ValueError("general regime needs a shared rotation; use TaskDistribution.general")
        if self.regime == LINEAR_CENTROID:
            if self.centroid is None:
                raise ValueError("linear-centroid regime needs a centroid")
            if self.spread <= 0.0:
                raise ValueError("spread must be positive")

    @classmethod
    def general(cls, rng, d, theta_low=0.0, theta_high=2.0, lambda_low=0.1, lambda_high=2.0):
        """Distribution with one Haar rotation shared by every sampled task."""
        return cls(
            d=d,
            regime=GENERAL,
            theta_low=theta_low,
            theta_high=theta_high,
            lambda_low=lambda_low,
            lambda_high=lambda_high,
            shared_V=random_orthogonal(rng, d),
        )

    @classmethod
    def linear_centroid(cls, d, centroid=None, spread=1.0):
        """Isotropic-feature distribution centred at ``centroid`` (defaults to 0)."""
        centroid = np.zeros(d) if centroid is None else np.asarray(centroid, dtype=np.float64)
        if centroid.shape != (d,):
            raise ValueError(f"centroid shape {centroid.shape} does not match dimension {d}")
        return cls(d=d, regime=LINEAR_CENTROID, centroid=centroid, spread=spread)


@dataclass(frozen=True)
class TaskSpec:
    """One task: its ground-truth parameter, feature covariance, and noise scale.

    ``noise_sigma`` is 1 for the data model proper; 0 is accepted so that
    noiseless diagnostic runs can reuse the same plumbing.
    """

    theta_gt: np.ndarray
    Q: np.ndarray
    noise_sigma: float = 1.0

    @property
    def dim(self) -> int:
        return self.theta_gt.shape[0]


@dataclass(frozen=True)
class TaskDataset:
    """Per-task design/label matrices with the train/validation split applied."""

    X_trn: np.ndarray
    y_trn: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray

    @property
    def n_trn(self) -> int:
        return self.X_trn.shape[0]

    @property
    def n_val(self) -> int:
        return self.X_val.shape[0]

    @property
    def n_total(self) -> int:
        return self.n_trn + self.n_val

    @property
    def dim(self) -> int:
        return self.X_trn.shape[1]

    @property
    def split_ratio(self) -> float:
        return self.n_trn / self.n_total


def split_sizes(n: int, s: float) -> tuple[int, int]:
    """Train/validation sizes for ``n`` points at split ratio ``s``.

    The train size is ``round(s * n)`` with ties rounded half away from zero;
    a split leaving either side empty raises :class:`InvalidSplitError`.
    """
    if not 0.0 < s < 1.0:
        raise InvalidSplitError(f"split ratio must lie in (0, 1), got {s}")
    n_trn = int(math.floor(s * n + 0.5))
    n_val = n - n_trn
    if n_trn < 1 or n_val < 1:
        raise InvalidSplitError(
            f"split s={s} of {n} points gives train={n_trn}, val={n_val}; both must be >= 1"
        )
    return n_trn, n_val


def sample_task(rng: np.random.Generator, dist: TaskDistribution) -> TaskSpec:
    """Draw a single task from the distribution."""
    return sample_tasks(rng, dist, 1)[0]


def sample_tasks(rng: np.random.Generator, dist: TaskDistribution, n: int) -> list[TaskSpec]:
    """Draw ``n`` tasks in one batch (identical in law to ``n`` single draws)."""
    d = dist.d
    if dist.regime == GENERAL:
        theta = rng.uniform(dist.theta_low, dist.theta_high, size=(n, d))
        lam = rng.uniform(dist.lambda_low, dist.lambda_high, size=(n, d))
        v = dist.shared_V
        q = np.einsum("ik,tk,jk->tij", v, lam, v)
    else:
        theta = dist.centroid + rng.standard_normal((n, d)) * (dist.spread / math.sqrt(d))
        q = np.broadcast_to(np.eye(d), (n, d, d))
    return [TaskSpec(theta_gt=theta[t], Q=np.ascontiguousarray(q[t])) for t in range(n)]


def sample_dataset(rng: np.random.Generator, task: TaskSpec, n: int, s: float) -> TaskDataset:
    """Draw one dataset of ``n`` points from a task and split it at ratio ``s``."""
    n_trn, _ = split_sizes(n, s)
    x = gaussian_matrix(rng, n, task.dim, task.Q)
    y = x @ task.theta_gt + task.noise_sigma * rng.standard_normal(n)
    return TaskDataset(X_trn=x[:n_trn], y_trn=y[:n_trn], X_val=x[n_trn:], y_val=y[n_trn:])


def sample_datasets(
    rng: np.random.Generator, tasks: list[TaskSpec], n: int, s: float
) -> list[TaskDataset]:
    """Draw one dataset per task, all of size ``n`` at split ratio ``s``.

    Vectorized over tasks: the draw is a single batched Gaussian, so this is
    the path to use for large task counts.
    """
    if not tasks:
        return []
    n_trn, _ = split_sizes(n, s)
    theta, q, sigma = stack_tasks(tasks)
    t, d = theta.shape
    lower = np.linalg.cholesky(q)
    z = rng.standard_normal((t, n, d))
    x = np.einsum("tnk,tdk->tnd", z, lower)
    eps = rng.standard_normal((t, n))
    y = np.einsum("tnd,td->tn", x, theta) + sigma[:, None] * eps
    return [
        TaskDataset(X_trn=x[i, :n_trn], y_trn=y[i, :n_trn], X_val=x[i, n_trn:], y_val=y[i, n_trn:])
        for i in range(t)
    ]


def empirical_Q(x: np.ndarray) -> np.ndarray:
    """Sample second-moment matrix ``X.T @ X / n``.

    May be singular when ``n < d``; callers that invert it must ridge or
    reject.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-d design matrix, got shape {x.shape}")
    return x.T @ x / x.shape[0]


def stack_tasks(tasks: list[TaskSpec]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack a task list into ``(theta (T,d), Q (T,d,d), sigma (T,))`` arrays."""
    if not tasks:
        raise ValueError("task list is empty")
    theta = np.stack([t.theta_gt for t in tasks])
    q = np.stack([t.Q for t in tasks])
    sigma = np.array([t.noise_sigma for t in tasks])
    return theta, q, sigma


def stack_datasets(
    datasets: list[TaskDataset],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack homogeneous datasets into ``(X_trn, y_trn, X_val, y_val)`` batches."""
    if not datasets:
        raise ValueError("dataset list is empty")
    shapes = {(ds.n_trn, ds.n_val, ds.dim) for ds in datasets}
    if len(shapes) != 1:
        raise ValueError(f"datasets must share sizes and split; got {sorted(shapes)}")
    x1 = np.stack([ds.X_trn for ds in datasets])
    y1 = np.stack([ds.y_trn for ds in datasets])
    x2 = np.stack([ds.X_val for ds in datasets])
    y2 = np.stack([ds.y_val for ds in datasets])
    return x1, y1, x2, y2
