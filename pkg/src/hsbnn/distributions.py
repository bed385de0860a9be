"""Scalar distributions and the closed-form moments the ELBO is built from.

Parameter containers accept plain floats/arrays or autodiff tensors; the
formulas route through :mod:`hsbnn.autodiff` so they can be differentiated.
Samplers take externally drawn standard-normal noise and own no RNG.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, ndtr

from . import autodiff as ad

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * (LOG_2PI + 1.0)


def _check_positive(name, x):
    if ad.is_tensor(x):
        return
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive, got {x!r}")


@dataclass(frozen=True)
class LogNormalParams:
    """Distribution of exp(N(mu, sigma^2)); may hold arrays of independent factors."""

    mu: object
    sigma: object

    def __post_init__(self):
        if not ad.is_tensor(self.mu) and not np.all(np.isfinite(np.asarray(self.mu, dtype=float))):
            raise ValueError("mu must be finite")
        _check_positive("sigma", self.sigma)


@dataclass(frozen=True)
class InvGammaParams:
    """Inverse-gamma with density proportional to v^(-shape-1) exp(-rate/v)."""

    shape: object
    rate: object

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)


def lognormal_sample(p: LogNormalParams, eps):
    return ad.exp(p.mu + p.sigma * eps)


def lognormal_entropy(p: LogNormalParams):
    return p.mu + ad.log(p.sigma) + HALF_LOG_2PIE


def lognormal_mean(p: LogNormalParams):
    return ad.exp(p.mu + 0.5 * ad.square(p.sigma))


def lognormal_mean_inverse(p: LogNormalParams):
    """E[1/X] for ln X ~ N(mu, sigma^2)."""
    return ad.exp(0.5 * ad.square(p.sigma) - p.mu)


def invgamma_moments(p: InvGammaParams):
    """Return (E[1/V], E[ln V], entropy) for V ~ InvGamma(shape, rate)."""
    a = np.asarray(p.shape, dtype=float)
    b = np.asarray(p.rate, dtype=float)
    mean_inverse = a / b
    mean_log = np.log(b) - digamma(a)
    entropy = a + np.log(b) + gammaln(a) - (1.0 + a) * digamma(a)
    if mean_inverse.ndim == 0:
        return float(mean_inverse), float(mean_log), float(entropy)
    return mean_inverse, mean_log, entropy


def _expected_log_invgamma(mean_log_x, mean_inv_x, shape, mean_log_rate, mean_rate):
    """E[ln InvGamma(X | shape, R)] for independent X and rate R."""
    return (
        shape * mean_log_rate
        - float(gammaln(shape))
        - (shape + 1.0) * mean_log_x
        - mean_rate * mean_inv_x
    )


def cross_term_lognormal_invgamma(x: LogNormalParams, lam: InvGammaParams):
    """E_q[ln InvGamma(X | 1/2, 1/L)] with X log-normal and L inverse-gamma, independent."""
    lam_inv, lam_log, _ = invgamma_moments(lam)
    return _expected_log_invgamma(x.mu, lognormal_mean_inverse(x), 0.5, -lam_log, lam_inv)


def expected_log_invgamma_fixed(x: LogNormalParams, shape: float, rate: float):
    """E_q[ln InvGamma(X | shape, rate)] for log-normal X and constant hyperparameters."""
    return _expected_log_invgamma(x.mu, lognormal_mean_inverse(x), shape, math.log(rate), rate)


def invgamma_cross_invgamma(lam: InvGammaParams, shape: float, rate: float):
    """E_q[ln InvGamma(L | shape, rate)] for inverse-gamma distributed L."""
    lam_inv, lam_log, _ = invgamma_moments(lam)
    return _expected_log_invgamma(lam_log, lam_inv, shape, math.log(rate), rate)


def expected_log_gamma(x: LogNormalParams, prior: GammaParams):
    """E_q[ln Gamma(X | shape, rate)] for log-normal X."""
    a, b = prior.shape, prior.rate
    return a * math.log(b) - float(gammaln(a)) + (a - 1.0) * x.mu - b * lognormal_mean(x)


def lognormal_product_cdf(a: LogNormalParams, b: LogNormalParams, threshold: float):
    """P(A * B < threshold) for independent log-normal A and B."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    m = np.asarray(a.mu, dtype=float) + np.asarray(b.mu, dtype=float)
    s = np.sqrt(np.square(a.sigma) + np.square(b.sigma))
    out = ndtr((math.log(threshold) - m) / s)
    return float(out) if np.ndim(out) == 0 else out


def invgamma_logpdf(v, shape, rate):
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(v) - rate / v


def gamma_logpdf(v, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(v) - rate * v


def normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + np.square(x - mean) / var)
