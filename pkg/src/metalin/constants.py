"""Statistical-error constants and their high-dimensional limits.

Under the linear-centroid regime (isotropic Gaussian features) every method's
expected empirical weight is a multiple of the identity, so the dominating
constant of the statistical error reduces to the trace ratio

    C0 = (1/d) E[tr(W_hat^2)] / ((1/d) E[tr(W_hat)])^2  >= 1,

estimated here by Monte Carlo over feature draws.  Its d, N -> infinity limit
at aspect ratio eta = d / N is evaluated through the closed-form Stieltjes
transform of the white Wishart spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import ERM, MAML, BaMAML, BaseMetaLearner, IMAML
from .exceptions import UnsupportedRegimeError
from .tasks import LINEAR_CENTROID, TaskDistribution, split_sizes

_ASYMPTOTIC_KINDS = ("erm", "maml", "imaml", "bamaml")


@dataclass(frozen=True)
class ConstantEstimate:
    """Monte-Carlo estimate of a dominating constant with its standard error."""

    value: float
    mc_std_error: float
    n_samples: int
    config: dict


@dataclass(frozen=True)
class OrderingReport:
    """Outcome of comparing two methods' grid-minimal constants."""

    ordered: bool
    verdict: str
    min_a: ConstantEstimate
    min_b: ConstantEstimate
    asymptotic_a: float
    asymptotic_b: float
    bound_only_b: bool
    grid_a: list = field(default_factory=list)
    grid_b: list = field(default_factory=list)


def weight_scale(estimator: BaseMetaLearner, split_ratio: float = 0.5) -> float:
    """Scalar w with population weight ``w * I`` under isotropic features.

    erm: 1; maml: (1 - alpha)^2; imaml: (1 + 1/gamma)^-2;
    bamaml: (1 + 1/(gamma s))^-1 (1 + 1/gamma)^-1.
    """
    if isinstance(estimator, MAML):
        return (1.0 - estimator.alpha) ** 2
    if isinstance(estimator, BaMAML):
        g = estimator.gamma
        return 1.0 / ((1.0 + 1.0 / (g * split_ratio)) * (1.0 + 1.0 / g))
    if isinstance(estimator, IMAML):
        return (1.0 + 1.0 / estimator.gamma) ** -2
    if isinstance(estimator, ERM):
        return 1.0
    raise ValueError(f"unknown estimator type {type(estimator).__name__}")


def erm_constant_exact(d: int, n: int) -> float:
    """Closed-form dominating constant of pooled least squares: (d + N + 1) / N."""
    if d < 1 or n < 1:
        raise ValueError(f"d and N must be >= 1, got d={d}, N={n}")
    return (d + n + 1) / n


def stieltjes(omega1: float, omega2: float, eta: float) -> float:
    """Limiting normalized trace of ``(omega1 I + omega2 Q_hat)^-1``.

    ``Q_hat`` is the sample covariance of N standard-Gaussian d-vectors with
    d/N -> eta.  The value lies in (0, 1/omega1].
    """
    if omega1 <= 0.0 or omega2 <= 0.0 or eta <= 0.0:
        raise ValueError("omega1, omega2 and eta must all be positive")
    ratio = omega1 / omega2
    root = math.sqrt((ratio + 1.0 + eta) ** 2 - 4.0 * eta)
    return (eta - 1.0 - ratio + root) / (2.0 * eta * omega1)


def stieltjes_derivative(omega1: float, omega2: float, eta: float, step: float = 1e-5) -> float:
    """Centered finite difference of :func:`stieltjes` in its first argument.

    The negated value is the limiting normalized trace of
    ``(omega1 I + omega2 Q_hat)^-2``.
    """
    return (stieltjes(omega1 + step, omega2, eta) - stieltjes(omega1 - step, omega2, eta)) / (
        2.0 * step
    )


def asymptotic_constant(kind: str, eta: float) -> float:
    """High-dimensional limit of the hyperparameter-infimum dominating constant.

    erm, maml, imaml all converge to ``1 + eta``.  bamaml attains 1 for
    eta <= 1; for eta > 1 the returned ``eta`` is only an upper bound (see
    :func:`constant_ordering_check`, which flags this in its report).
    """
    kind = kind.lower()
    if kind not in _ASYMPTOTIC_KINDS:
        raise ValueError(f"unknown method kind {kind!r}")
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    if kind == "bamaml":
        return 1.0 if eta <= 1.0 else eta
    return 1.0 + eta


def dominating_constant_mc(
    estimator: BaseMetaLearner,
    d: int,
    n: int,
    split_ratio: float,
    rng: np.random.Generator,
    n_samples: int,
    batch_size: int = 512,
    distribution: TaskDistribution | None = None,
) -> ConstantEstimate:
    """Monte-Carlo estimate of the trace-ratio dominating constant.

    Draws ``n_samples`` independent empirical weight matrices from
    standard-Gaussian feature matrices and returns the ratio of Monte-Carlo
    means with a delta-method standard error.  Only valid under isotropic
    features; a non-isotropic ``distribution`` is rejected because the trace
    form silently misreports there.
    """
    if n_samples < 100:
        raise ValueError(f"need at least 100 samples for a usable error bar, got {n_samples}")
    if distribution is not None and distribution.regime != LINEAR_CENTROID:
        raise UnsupportedRegimeError(
            "the trace-ratio constant assumes isotropic features (Q = I); "
            "the general regime would make E[W_hat] non-scalar and the ratio meaningless"
        )
    estimator._check_params()
    n_trn, n_val = split_sizes(n, split_ratio)
    sq_traces = np.empty(n_samples)
    traces = np.empty(n_samples)
    done = 0
    while done < n_samples:
        size = min(batch_size, n_samples - done)
        x_trn = rng.standard_normal((size, n_trn, d))
        x_val = rng.standard_normal((size, n_val, d))
        w = estimator._empirical_weight_stack(x_trn, x_val)
        sq_traces[done : done + size] = np.einsum("bij,bij->b", w, w) / d
        traces[done : done + size] = np.trace(w, axis1=-2, axis2=-1) / d
        done += size
    # compensated sums keep the accumulators exact regardless of batch order
    mean_sq = math.fsum(sq_traces) / n_samples
    mean_tr = math.fsum(traces) / n_samples
    value = mean_sq / mean_tr**2
    var_sq = float(np.var(sq_traces, ddof=1))
    var_tr = float(np.var(traces, ddof=1))
    cov = float(np.cov(sq_traces, traces, ddof=1)[0, 1])
    var_value = (
        var_sq / mean_tr**4
        + 4.0 * mean_sq**2 * var_tr / mean_tr**6
        - 4.0 * mean_sq * cov / mean_tr**5
    ) / n_samples
    config = {
        "method": estimator.method,
        **estimator.get_params(),
        "d": d,
        "N": n,
        "s": split_ratio,
    }
    return ConstantEstimate(
        value=float(value),
        mc_std_error=float(math.sqrt(max(var_value, 0.0))),
        n_samples=n_samples,
        config=config,
    )


def constant_ordering_check(
    eta: float,
    d: int,
    n: int,
    n_samples: int,
    rng: np.random.Generator,
    alpha_grid=(0.01, 0.05, 0.1, 0.2, 0.5),
    gamma_grid=(1e-3, 0.1, 1.0, 10.0, 1e3),
    s_grid=(0.1, 0.25, 0.5),
    method_a: type | None = None,
    method_b: type | None = None,
) -> OrderingReport:
    """Compare two methods' grid-infimum constants against their limits.

    Estimates the constant on every grid point, takes each method's minimum,
    and reports whether the first strictly exceeds the second beyond the
    combined 3-sigma Monte-Carlo error.  The default comparison is the
    one-step-gradient learner against the Bayesian one.  The grid for the
    Bayesian side is augmented with the extreme split ``1/N`` (one training
    point), which approximates its infimizing corner at finite size.
    """
    if abs(d / n - eta) > 1e-9:
        raise ValueError(f"eta={eta} does not match d/N={d / n}")
    method_a = MAML if method_a is None else method_a
    method_b = BaMAML if method_b is None else method_b

    def grid_points(method_cls):
        if method_cls is MAML:
            return [(MAML(alpha=a), s) for a in alpha_grid for s in s_grid]
        if method_cls is ERM:
            return [(ERM(), s_grid[0])]
        extreme = sorted(set(tuple(s_grid) + (1.0 / n,)))
        return [(method_cls(gamma=g), s) for g in gamma_grid for s in extreme]

    def scan(method_cls):
        estimates = []
        for est, s in grid_points(method_cls):
            estimates.append(dominating_constant_mc(est, d, n, s, rng, n_samples))
        return estimates

    grid_a = scan(method_a)
    grid_b = scan(method_b)
    min_a = min(grid_a, key=lambda e: e.value)
    min_b = min(grid_b, key=lambda e: e.value)
    gap = min_a.value - min_b.value
    sigma = math.sqrt(min_a.mc_std_error**2 + min_b.mc_std_error**2)
    ordered = (method_a is not method_b) and gap > 3.0 * sigma
    verdict = "ordered" if ordered else "indistinguishable"
    kind_b = method_b.method
    return OrderingReport(
        ordered=ordered,
        verdict=verdict,
        min_a=min_a,
        min_b=min_b,
        asymptotic_a=asymptotic_constant(method_a.method, eta),
        asymptotic_b=asymptotic_constant(kind_b, eta),
        bound_only_b=(kind_b == "bamaml" and eta > 1.0),
        grid_a=grid_a,
        grid_b=grid_b,
    )
