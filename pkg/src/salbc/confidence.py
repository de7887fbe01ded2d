"""High-probability confidence intervals around the GP estimates.

The radius multiplier for each estimated quantity has the form
``B + alpha * R * sqrt(2 * (gamma + 1 + ln(1/delta_eff)))`` with
``alpha = 1/noise_variance`` and ``gamma`` the information gain of the data
collected so far. The total failure probability is split evenly across the
three quantities (``d``, ``d'`` and ``d d'``) so the intervals hold jointly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .validation import as_states, check_scalar

__all__ = [
    "ConfidenceConfig",
    "ConfidenceInterval",
    "NodeEstimates",
    "info_gain",
    "beta_sqrt",
    "interval_d",
    "interval_dd",
    "interval_ddd",
    "estimate",
    "exact_estimates",
]

N_STATEMENTS = 3


@dataclass(frozen=True)
class ConfidenceConfig:
    """Constants entering the confidence radii.

    ``noise_variance`` is the GP regularizer sigma^2 and fixes ``alpha``;
    ``R`` is the sub-Gaussian constant of the measurement noise. The two
    coincide in meaning only when the GP noise model is exact.
    """

    delta: float = 0.1
    B_d: float = 1.0
    B_d2: float = 1.0
    R: float = 0.1
    noise_variance: float = 0.01

    def __post_init__(self):
        check_scalar(self.delta, "delta", low=0.0, high=1.0, include_low=False, include_high=False)
        check_scalar(self.B_d, "B_d", low=0.0)
        check_scalar(self.B_d2, "B_d2", low=0.0)
        check_scalar(self.R, "R", low=0.0)
        check_scalar(self.noise_variance, "noise_variance", low=0.0, include_low=False)

    @property
    def alpha(self):
        return 1.0 / self.noise_variance

    @property
    def delta_eff(self):
        return self.delta / N_STATEMENTS


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, values, atol=0.0):
        values = np.asarray(values)
        return (values >= self.lower - atol) & (values <= self.upper + atol)


def info_gain(post):
    """Realized information gain ``1/2 sum_s ln(1 + var_{s-1}(x_s) / sigma^2)``.

    ``var_{s-1}(x_s)`` is the predictive variance at the s-th input given the
    first ``s-1``; it is read off the Cholesky diagonal, since
    ``L_ss^2 = sigma^2 + var_{s-1}(x_s)``.
    """
    check_is_fitted(post, "factor_")
    if post.n_train_ == 0:
        return 0.0
    sigma2 = float(post.noise_variance)
    prior_resid = np.diag(post.factor_) ** 2 - sigma2
    return float(0.5 * np.sum(np.log1p(prior_resid / sigma2)))


def beta_sqrt(cfg, B, gamma):
    """Radius multiplier ``sqrt(beta)`` for RKHS bound ``B`` and gain ``gamma``."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    noise_term = cfg.alpha * cfg.R * math.sqrt(2.0 * (gamma + 1.0 + math.log(1.0 / cfg.delta_eff)))
    return B + noise_term


def _interval(mean, std, root_beta):
    half = root_beta * std
    return ConfidenceInterval(mean - half, mean + half)


def interval_d(post, cfg, x, gamma=None):
    gamma = info_gain(post) if gamma is None else gamma
    mean, std = post.query_d(x)
    return _interval(mean, std, beta_sqrt(cfg, cfg.B_d, gamma))


def interval_dd(post, cfg, x, gamma=None):
    gamma = info_gain(post) if gamma is None else gamma
    mean, std = post.query_dd(x)
    return _interval(mean, std, beta_sqrt(cfg, cfg.B_d, gamma))


def interval_ddd(post, cfg, x, gamma=None):
    # The d^2/2 head shares the Gram matrix, so its information gain equals
    # that of the d head.
    gamma = info_gain(post) if gamma is None else gamma
    mean, std = post.query_ddd(x)
    return _interval(mean, std, beta_sqrt(cfg, cfg.B_d2, gamma))


@dataclass(frozen=True)
class NodeEstimates:
    """All three intervals at a batch of states, sharing one gain evaluation."""

    x: np.ndarray
    d: ConfidenceInterval
    dd: ConfidenceInterval
    ddd: ConfidenceInterval
    std_d: np.ndarray
    gamma: float
    sqrt_beta_d: float
    sqrt_beta_d2: float

    def subset(self, idx):
        pick = lambda iv: ConfidenceInterval(iv.lower[idx], iv.upper[idx])  # noqa: E731
        return NodeEstimates(
            self.x[idx], pick(self.d), pick(self.dd), pick(self.ddd), self.std_d[idx],
            self.gamma, self.sqrt_beta_d, self.sqrt_beta_d2,
        )


def estimate(post, cfg, x):
    x = as_states(x)
    gamma = info_gain(post)
    mean_d, std_d = post.query_d(x)
    sb_d = beta_sqrt(cfg, cfg.B_d, gamma)
    sb_d2 = beta_sqrt(cfg, cfg.B_d2, gamma)
    mean_dd, std_dd = post.query_dd(x)
    mean_ddd, std_ddd = post.query_ddd(x)
    return NodeEstimates(
        x=x,
        d=_interval(mean_d, std_d, sb_d),
        dd=_interval(mean_dd, std_dd, sb_d),
        ddd=_interval(mean_ddd, std_ddd, sb_d2),
        std_d=std_d,
        gamma=gamma,
        sqrt_beta_d=sb_d,
        sqrt_beta_d2=sb_d2,
    )


def exact_estimates(x, d, d_prime):
    """Zero-width estimates built from known values (no learning)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.broadcast_to(np.asarray(d(x), dtype=float), x.shape).copy()
    dp = np.broadcast_to(np.asarray(d_prime(x), dtype=float), x.shape).copy()
    zero = ConfidenceInterval
    return NodeEstimates(
        x=x, d=zero(d, d.copy()), dd=zero(dp, dp.copy()), ddd=zero(d * dp, d * dp),
        std_d=np.zeros_like(x), gamma=0.0, sqrt_beta_d=0.0, sqrt_beta_d2=0.0,
    )
