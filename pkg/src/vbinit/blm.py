"""Closed-form Bayesian linear regression and its mean-field projection.

Also hosts the label transform that turns one-hot classification targets
into log-Normal regression targets with per-entry noise levels.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .exceptions import BadOneHot
from .numkernel import as_matrix, solve_spd

__all__ = [
    "BlrPosterior",
    "FactorizedGaussian",
    "TransformedLabels",
    "fit_blr",
    "fit_hetero_blr",
    "project_factorized",
    "transform_labels",
    "blr_predict",
    "gaussian_kl",
    "BayesianLinearRegression",
]


@dataclass
class BlrPosterior:
    """Gaussian posterior ``N(mean, covariance)`` over linear weights.

    ``precision`` is the inverse covariance as assembled during the fit;
    keeping it avoids re-inverting ``covariance`` for the projection.
    ``noise_variance`` is a scalar for the homoscedastic model and a
    per-point vector for the heteroscedastic one.
    """

    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    noise_variance: object
    prior_precision: float

    @property
    def homoscedastic(self):
        return np.ndim(self.noise_variance) == 0


@dataclass
class FactorizedGaussian:
    means: np.ndarray
    variances: np.ndarray


@dataclass
class TransformedLabels:
    means: np.ndarray
    variances: np.ndarray


def _check_design(x, y):
    x = as_matrix(x, "x")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]} entries")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError("need at least one observation and one feature")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or infinite entries")
    return x, y


def _posterior(precision, rhs):
    # solve once against [rhs | I] so mean and covariance share one factorization
    d = precision.shape[0]
    sol = solve_spd(precision, np.column_stack([rhs, np.eye(d)]))
    cov = sol[:, 1:]
    return sol[:, 0], 0.5 * (cov + cov.T)


def fit_blr(x, y, prior_precision=1.0, noise_variance=1.0):
    """Conjugate posterior for ``y = x @ w + eps``, ``eps ~ N(0, noise_variance)``.

    The prior is ``w ~ N(0, I / prior_precision)``.
    """
    if prior_precision <= 0 or noise_variance <= 0:
        raise ValueError("prior_precision and noise_variance must be positive")
    x, y = _check_design(x, y)
    beta = 1.0 / noise_variance
    precision = beta * (x.T @ x) + prior_precision * np.eye(x.shape[1])
    mean, cov = _posterior(precision, beta * (x.T @ y))
    return BlrPosterior(mean, cov, precision, float(noise_variance), float(prior_precision))


def fit_hetero_blr(x, y, prior_precision=1.0, noise_variances=None):
    """Conjugate posterior with one noise variance per observation."""
    if prior_precision <= 0:
        raise ValueError("prior_precision must be positive")
    x, y = _check_design(x, y)
    lam = np.asarray(noise_variances, dtype=np.float64).reshape(-1)
    if lam.shape[0] != x.shape[0]:
        raise ValueError(f"need {x.shape[0]} noise variances, got {lam.shape[0]}")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("noise variances must be positive and finite")
    w = 1.0 / lam
    xw = x * w[:, None]
    precision = x.T @ xw + prior_precision * np.eye(x.shape[1])
    mean, cov = _posterior(precision, xw.T @ y)
    return BlrPosterior(mean, cov, precision, lam, float(prior_precision))


def project_factorized(posterior):
    """KL(q || p)-optimal fully factorized Gaussian for a BLR posterior.

    The means are kept and each variance is the reciprocal of the matching
    diagonal entry of the posterior precision.
    """
    precision = posterior.precision
    if precision is None:
        precision = solve_spd(posterior.covariance, np.eye(posterior.covariance.shape[0]))
    return FactorizedGaussian(posterior.mean.copy(), 1.0 / np.diag(precision))


def transform_labels(y_onehot, alpha=0.01):
    """Log-Normal regression targets for one-hot labels.

    Each entry ``y`` becomes a Gaussian target in log space whose
    exponential has mean and variance ``y + alpha``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y_onehot, dtype=np.float64)
    if y.ndim != 2:
        raise BadOneHot(f"labels must be an n x k matrix, got shape {y.shape}")
    bad = ~(np.isin(y, (0.0, 1.0)).all(axis=1) & (y.sum(axis=1) == 1.0))
    if np.any(bad):
        raise BadOneHot(f"row {int(np.argmax(bad))} is not one-hot")
    shifted = y + alpha
    var = np.log1p(1.0 / shifted)
    return TransformedLabels(np.log(shifted) - 0.5 * var, var)


def blr_predict(posterior, x_star, noise_variance=None):
    """Predictive mean and variance at a single feature vector.

    Heteroscedastic posteriors carry no noise level for unseen points, so
    the caller passes ``noise_variance`` (defaults to 0 in that case).
    """
    x_star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    if noise_variance is None:
        noise_variance = posterior.noise_variance if posterior.homoscedastic else 0.0
    mean = float(x_star @ posterior.mean)
    var = float(x_star @ posterior.covariance @ x_star) + float(noise_variance)
    return mean, var


def gaussian_kl(mean_q, cov_q, mean_p, cov_p):
    """Closed-form ``KL(N(mean_q, cov_q) || N(mean_p, cov_p))``.

    Covariances may be full matrices or 1-D diagonals.
    """
    mean_q, mean_p = np.asarray(mean_q, float), np.asarray(mean_p, float)
    cov_q = np.diag(cov_q) if np.ndim(cov_q) == 1 else np.asarray(cov_q, float)
    cov_p = np.diag(cov_p) if np.ndim(cov_p) == 1 else np.asarray(cov_p, float)
    d = mean_q.shape[0]
    diff = mean_p - mean_q
    trace = np.trace(solve_spd(cov_p, cov_q))
    maha = diff @ solve_spd(cov_p, diff)
    logdet_p = np.linalg.slogdet(cov_p)[1]
    logdet_q = np.linalg.slogdet(cov_q)[1]
    return 0.5 * (trace + maha - d + logdet_p - logdet_q)


class BayesianLinearRegression(RegressorMixin, BaseEstimator):
    """Conjugate Bayesian linear regression with an isotropic Gaussian prior.

    Parameters
    ----------
    prior_precision : float, default=1.0
        Precision of the zero-mean isotropic weight prior.
    noise_variance : float, default=1.0
        Observation noise variance.
    fit_intercept : bool, default=True
        Append a constant-one feature so the bias is inferred with the weights.

    Attributes
    ----------
    posterior_ : BlrPosterior
        Posterior over the (augmented) weight vector.
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    """

    def __init__(self, prior_precision=1.0, noise_variance=1.0, fit_intercept=True):
        self.prior_precision = prior_precision
        self.noise_variance = noise_variance
        self.fit_intercept = fit_intercept

    def _design(self, X):
        if self.fit_intercept:
            return np.column_stack([X, np.ones(X.shape[0])])
        return X

    def fit(self, X, y, sample_noise_variance=None):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        design = self._design(X)
        if sample_noise_variance is None:
            self.posterior_ = fit_blr(design, y, self.prior_precision, self.noise_variance)
        else:
            self.posterior_ = fit_hetero_blr(design, y, self.prior_precision,
                                             sample_noise_variance)
        mean = self.posterior_.mean
        self.coef_ = mean[:X.shape[1]]
        self.intercept_ = float(mean[-1]) if self.fit_intercept else 0.0
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self)
        X = validate_data(self, X, dtype=np.float64, reset=False)
        design = self._design(X)
        mean = design @ self.posterior_.mean
        if not return_std:
            return mean
        noise = self.noise_variance
        var = np.einsum("ij,jk,ik->i", design, self.posterior_.covariance, design) + noise
        return mean, np.sqrt(var)
