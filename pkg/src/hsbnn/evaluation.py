"""Monte-Carlo posterior predictive evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import Standardizer
from .distributions import LOG_2PI
from .variational import Posterior, draw_noise, gamma_posterior, sample_outputs


@dataclass
class Predictive:
    """Per-point predictive summaries in original target units."""

    mean: np.ndarray
    std: np.ndarray
    samples: np.ndarray  # (S, n) function draws, original units
    noise_var: np.ndarray  # (S,) 1/gamma draws, original units


def predictive(post: Posterior, x, S: int, rng: np.random.Generator, stats: Standardizer | None = None) -> Predictive:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    noise = draw_noise(post, len(x), S, rng)
    g = gamma_posterior(post)
    gammas = np.exp(g.mu + g.sigma * rng.standard_normal(S))
    f = np.stack([np.asarray(sample_outputs(post, x, noise.sample(s)))[:, 0] for s in range(S)])
    scale, shift = (stats.y_std, stats.y_mean) if stats is not None else (1.0, 0.0)
    f = f * scale + shift
    noise_var = scale**2 / gammas
    total_var = f.var(axis=0) + noise_var.mean()
    return Predictive(f.mean(axis=0), np.sqrt(total_var), f, noise_var)


def evaluate(post: Posterior, x, y, stats: Standardizer | None, S: int, rng: np.random.Generator):
    """(RMSE, mean predictive log-likelihood) on targets `y` given in ORIGINAL units."""
    y = np.asarray(y, dtype=float).ravel()
    pred = predictive(post, x, S, rng, stats)
    rmse = float(np.sqrt(np.mean(np.square(pred.mean - y))))
    resid = y[None, :] - pred.samples
    logp = -0.5 * (LOG_2PI + np.log(pred.noise_var)[:, None] + resid**2 / pred.noise_var[:, None])
    ll = logsumexp(logp, axis=0) - math.log(S)
    return rmse, float(np.mean(ll))
