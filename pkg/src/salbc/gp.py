"""Gaussian-process regression of an unknown drift term and its derivative.

The regressor keeps two heads on one Gram factorization: one fitted to
measurements of ``d(x)`` and one fitted to measurements of ``d(x)**2 / 2``.
Differentiating the kernel features of each head yields posteriors for
``d'(x)`` and for ``d(x) d'(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .kernels import SquaredExponential
from .validation import as_states, check_scalar, check_targets

__all__ = ["Measurement", "DerivativeGPRegressor", "NumericalConditioningError"]


class NumericalConditioningError(np.linalg.LinAlgError):
    """Raised when ``K + noise_variance * I`` fails to factorize."""


@dataclass(frozen=True)
class Measurement:
    """One noisy sample of the drift term at state ``x`` under control ``u``."""

    x: float
    u: float
    d_hat: float
    d2_hat: float


class DerivativeGPRegressor(RegressorMixin, BaseEstimator):
    """GP posterior for ``d``, ``d'``, ``d^2/2`` and ``d d'`` on scalar states.

    Parameters
    ----------
    kernel : SquaredExponential, optional
        Prior covariance. Defaults to unit signal variance and lengthscale.
    noise_variance : float
        Observation noise variance added to the Gram diagonal. Must be
        positive, which keeps the system positive definite even with
        repeated inputs.

    Attributes
    ----------
    X_train_ : ndarray of shape (n,)
    y_train_, y_half_sq_train_ : ndarray of shape (n,)
        Targets of the two heads.
    factor_ : ndarray of shape (n, n)
        Lower Cholesky factor of ``K + noise_variance * I``.
    weights_d_, weights_d2_ : ndarray of shape (n,)
        ``(K + noise_variance * I)^{-1}`` applied to each target vector.
    """

    def __init__(self, kernel=None, noise_variance=0.01):
        self.kernel = kernel
        self.noise_variance = noise_variance

    def fit(self, X, y, y_half_sq=None, controls=None):
        """Condition on ``n`` measurements (``n = 0`` leaves the prior).

        ``y_half_sq`` defaults to ``y**2 / 2``. ``controls`` are stored for
        bookkeeping only; the regression does not depend on them.
        """
        sigma2 = check_scalar(self.noise_variance, "noise_variance", low=0.0, include_low=False)
        self.kernel_ = SquaredExponential() if self.kernel is None else self.kernel
        X = as_states(X)
        n = X.shape[0]
        y = check_targets(y, n)
        y2 = 0.5 * y**2 if y_half_sq is None else check_targets(y_half_sq, n, "y_half_sq")
        u = np.zeros(n) if controls is None else check_targets(controls, n, "controls")

        gram = self.kernel_.gram(X) + sigma2 * np.eye(n)
        try:
            factor = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalConditioningError(
                f"Cholesky factorization of the {n}x{n} Gram matrix failed "
                f"(noise_variance={sigma2})"
            ) from exc
        if n and not np.all(np.isfinite(factor)):
            raise NumericalConditioningError("Cholesky factor contains non-finite entries")

        self.X_train_ = X
        self.y_train_ = y
        self.y_half_sq_train_ = y2
        self.controls_ = u
        self.factor_ = factor
        self.weights_d_ = self._solve(y)
        self.weights_d2_ = self._solve(y2)
        self.n_train_ = n
        return self

    @classmethod
    def from_measurements(cls, measurements, kernel=None, noise_variance=0.01):
        ms = list(measurements)
        return cls(kernel=kernel, noise_variance=noise_variance).fit(
            [m.x for m in ms],
            [m.d_hat for m in ms],
            [m.d2_hat for m in ms],
            controls=[m.u for m in ms],
        )

    @property
    def measurements(self):
        check_is_fitted(self, "factor_")
        return [
            Measurement(float(x), float(u), float(y), float(y2))
            for x, u, y, y2 in zip(self.X_train_, self.controls_, self.y_train_, self.y_half_sq_train_)
        ]

    def add_measurement(self, m):
        """Return a new regressor conditioned on the current data plus ``m``.

        The receiver is left untouched and may be unfitted (the prior). The
        factorization is recomputed from scratch, which keeps results
        bit-identical to a batch fit.
        """
        previous = self.measurements if hasattr(self, "factor_") else []
        return type(self).from_measurements(previous + [m], self.kernel, self.noise_variance)

    # -- queries --------------------------------------------------------------

    def _solve(self, rhs):
        if self.factor_.shape[0] == 0:
            return np.zeros(0) if np.ndim(rhs) == 1 else np.zeros((0,) + np.shape(rhs)[1:])
        z = solve_triangular(self.factor_, rhs, lower=True)
        return solve_triangular(self.factor_.T, z, lower=False)

    def _posterior(self, X, features, prior_var, weights, return_std):
        mean = features @ weights
        if not return_std:
            return mean
        if self.n_train_:
            v = solve_triangular(self.factor_, features.T, lower=True)
            var = prior_var - np.einsum("ij,ij->j", v, v)
        else:
            var = prior_var
        return mean, np.sqrt(np.maximum(var, 0.0))

    def _check_query(self, X):
        check_is_fitted(self, "factor_")
        return as_states(X)

    def predict(self, X, return_std=False):
        """Posterior mean (and std) of ``d`` at ``X``."""
        X = self._check_query(X)
        feats = self.kernel_.eval(X[:, None], self.X_train_[None, :])
        return self._posterior(X, feats, self.kernel_.diag(X), self.weights_d_, return_std)

    def predict_derivative(self, X, return_std=False):
        """Posterior mean (and std) of ``d'`` at ``X``."""
        X = self._check_query(X)
        feats = self.kernel_.eval_dx(X[:, None], self.X_train_[None, :])
        return self._posterior(X, feats, self.kernel_.diag_dxdx(X), self.weights_d_, return_std)

    def predict_half_square(self, X, return_std=False):
        """Posterior mean (and std) of ``d^2 / 2`` at ``X``."""
        X = self._check_query(X)
        feats = self.kernel_.eval(X[:, None], self.X_train_[None, :])
        return self._posterior(X, feats, self.kernel_.diag(X), self.weights_d2_, return_std)

    def predict_product(self, X, return_std=False):
        """Posterior mean (and std) of ``d d'``, the derivative of the ``d^2/2`` head."""
        X = self._check_query(X)
        feats = self.kernel_.eval_dx(X[:, None], self.X_train_[None, :])
        return self._posterior(X, feats, self.kernel_.diag_dxdx(X), self.weights_d2_, return_std)

    # (mean, std) shorthands
    def query_d(self, X):
        return self.predict(X, return_std=True)

    def query_dd(self, X):
        return self.predict_derivative(X, return_std=True)

    def query_d2(self, X):
        return self.predict_half_square(X, return_std=True)

    def query_ddd(self, X):
        return self.predict_product(X, return_std=True)
