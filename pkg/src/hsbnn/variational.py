"""Variational families, pre-activation distributions and the ELBO.

A :class:`Posterior` stores every variational parameter in unconstrained
form (positive quantities as logs) in a flat name -> array mapping, plus
the inverse-gamma auxiliary factors, which are set by fixed-point updates
rather than by gradient steps.  Layer views (:class:`Factorized`, ...)
are built on demand from that mapping; when the mapping holds autodiff
tensors the same code builds the differentiable objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from . import autodiff as ad
from .distributions import (
    HALF_LOG_2PIE,
    LOG_2PI,
    InvGammaParams,
    LogNormalParams,
    cross_term_lognormal_invgamma,
    expected_log_gamma,
    expected_log_invgamma_fixed,
    invgamma_cross_invgamma,
    invgamma_moments,
    lognormal_entropy,
    lognormal_mean,
)
from .lowrank import DiagRankOne, MatrixNormalStructured, condition_on_last_row, mn_entropy, quad_form
from .model import NetworkSpec, TrainingFault, activation, log_scale2

FAMILIES = ("factorized", "tied", "semi_structured", "structured")
LOG_SIGMA_FLOOR = math.log(1e-8)


@dataclass(frozen=True)
class Factorized:
    mu: object
    sigma: object


@dataclass(frozen=True)
class FactorizedTied:
    mu: object


@dataclass(frozen=True)
class SemiStructured:
    beta: MatrixNormalStructured


@dataclass(frozen=True)
class Structured:
    """Joint matrix-normal over [beta; nu^T] with nu_k = ln tau_k."""

    joint: MatrixNormalStructured

    @property
    def beta_rows(self) -> int:
        return self.joint.shape[0] - 1


LayerPosterior = Union[Factorized, FactorizedTied, SemiStructured, Structured]


@dataclass
class Posterior:
    """Complete variational state for one network."""

    spec: NetworkSpec
    family: str
    params: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not self.spec.shrinkage and self.family != "factorized":
            raise ValueError("the gaussian-prior baseline supports only the factorized family")

    def copy(self) -> "Posterior":
        return Posterior(
            self.spec,
            self.family,
            {k: np.array(v, dtype=float, copy=True) for k, v in self.params.items()},
            {k: InvGammaParams(np.array(v.shape, dtype=float), np.array(v.rate, dtype=float)) for k, v in self.aux.items()},
        )

    def layer_shape(self, l: int) -> tuple[int, int]:
        return self.spec.fan_in(l), self.spec.layer_widths[l + 1]


# --------------------------------------------------------------------------
# initialization


INIT_ACTIVE_UNITS = 10


def _active_quantile(n: int) -> float:
    """Quantile of the initial unit scales that the layer scale normalizes to one."""
    return float(np.clip(1.0 - INIT_ACTIVE_UNITS / n, 0.5, 0.99))


def init_posterior(spec: NetworkSpec, family: str, rng: np.random.Generator) -> Posterior:
    """Initial variational state; auxiliaries are set by one fixed-point sweep."""
    post = Posterior(spec, family)
    p = post.params
    for l in range(spec.n_hidden):
        m, n = post.layer_shape(l)
        mean = rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, n))
        # unit scales start at draws from their half-Cauchy prior and the layer
        # scale puts the largest few units at O(1); a symmetric start leaves
        # every unit with 1/K of the signal and the whole layer shrinks
        log_tau2 = 2.0 * np.log(spec.b0 * np.abs(rng.standard_cauchy(n)))
        if family in ("factorized", "tied"):
            p[f"h{l}.mu"] = mean
            if family == "factorized":
                p[f"h{l}.log_sigma"] = np.full((m, n), math.log(0.1))
        else:
            rows = m + 1 if family == "structured" else m
            if family == "structured":
                mean = np.vstack([mean, 0.5 * log_tau2[None, :]])
            h = rng.normal(size=rows)
            p[f"h{l}.M"] = mean
            p[f"h{l}.log_psi"] = np.full(rows, -math.log(rows))
            p[f"h{l}.h"] = 0.01 * h / np.linalg.norm(h)
            p[f"h{l}.log_V"] = np.full(n, -math.log(n))
        if spec.shrinkage:
            if family != "structured":
                p[f"h{l}.tau_mu"] = log_tau2
                p[f"h{l}.tau_log_sigma"] = np.full(n, math.log(0.1))
            p[f"h{l}.ups_mu"] = np.array(-np.quantile(log_tau2, _active_quantile(n)))
            p[f"h{l}.ups_log_sigma"] = np.array(math.log(0.1))
    m_out, n_out = spec.fan_in(spec.n_hidden), spec.output_dim
    p["out.mu"] = rng.normal(0.0, 1.0 / math.sqrt(m_out), size=(m_out, n_out))
    p["out.log_sigma"] = np.full((m_out, n_out), math.log(0.1))
    if spec.shrinkage:
        p["kappa_mu"] = np.array(0.0)
        p["kappa_log_sigma"] = np.array(math.log(0.1))
    if spec.regularized:
        p["c_mu"] = np.array(math.log(spec.c_b / (spec.c_a - 1.0)) if spec.c_a > 1 else 0.0)
        p["c_log_sigma"] = np.array(math.log(0.1))
    g = spec.gamma_prior
    p["gamma_mu"] = np.array(math.log(g.shape / g.rate))
    p["gamma_log_sigma"] = np.array(math.log(0.1))
    if spec.shrinkage:
        from .trainer import update_auxiliaries

        update_auxiliaries(post)
    return post


# --------------------------------------------------------------------------
# views


def _lognormal(params: Mapping, prefix: str) -> LogNormalParams:
    return LogNormalParams(params[prefix + "_mu"], ad.exp(params[prefix + "_log_sigma"]))


def layer_posterior(post: Posterior, l: int, params: Mapping | None = None) -> LayerPosterior:
    p = post.params if params is None else params
    fam = post.family
    if fam == "factorized":
        return Factorized(p[f"h{l}.mu"], ad.exp(p[f"h{l}.log_sigma"]))
    if fam == "tied":
        return FactorizedTied(p[f"h{l}.mu"])
    mn = MatrixNormalStructured(
        p[f"h{l}.M"], DiagRankOne(ad.exp(p[f"h{l}.log_psi"]), p[f"h{l}.h"]), ad.exp(p[f"h{l}.log_V"])
    )
    return SemiStructured(mn) if fam == "semi_structured" else Structured(mn)


def nu_marginal(layer: Structured):
    """(mean, std) of each nu_k = ln tau_k under the joint."""
    U = layer.joint.U
    var = layer.joint.V * (U.psi[-1] + ad.square(U.h[-1]))
    return layer.joint.M[-1], ad.sqrt(var)


def tau2_posterior(post: Posterior, l: int, params: Mapping | None = None) -> LogNormalParams:
    """Log-normal marginal of tau_kl^2 for every unit of hidden layer l."""
    p = post.params if params is None else params
    if post.family == "structured":
        mean, std = nu_marginal(layer_posterior(post, l, p))
        return LogNormalParams(2.0 * mean, 2.0 * std)
    return _lognormal(p, f"h{l}.tau")


def upsilon2_posterior(post: Posterior, l: int, params: Mapping | None = None) -> LogNormalParams:
    return _lognormal(post.params if params is None else params, f"h{l}.ups")


def kappa2_posterior(post: Posterior, params: Mapping | None = None) -> LogNormalParams:
    return _lognormal(post.params if params is None else params, "kappa")


def c2_posterior(post: Posterior, params: Mapping | None = None) -> LogNormalParams:
    return _lognormal(post.params if params is None else params, "c")


def gamma_posterior(post: Posterior, params: Mapping | None = None) -> LogNormalParams:
    return _lognormal(post.params if params is None else params, "gamma")


def output_posterior(post: Posterior, params: Mapping | None = None) -> Factorized:
    p = post.params if params is None else params
    return Factorized(p["out.mu"], ad.exp(p["out.log_sigma"]))


def beta_moments(layer: LayerPosterior):
    """(mean, variance) of the non-centered weights, excluding any scale row."""
    if isinstance(layer, Factorized):
        return layer.mu, ad.square(layer.sigma)
    if isinstance(layer, FactorizedTied):
        return layer.mu, np.ones(np.shape(ad.value(layer.mu)))
    mn = layer.joint if isinstance(layer, Structured) else layer.beta
    m, n = mn.shape
    rows = m - 1 if isinstance(layer, Structured) else m
    diag = mn.U.diagonal()[:rows]
    var = ad.reshape(diag, (rows, 1)) * ad.reshape(mn.V, (1, n))
    return mn.M[:rows], var


# --------------------------------------------------------------------------
# pre-activations


def _column(x):
    return ad.reshape(x, (-1, 1))


def preactivation_dist_structured(layer: Structured, nu_sample, a):
    """Mean and variance of beta^T a given the sampled log-scales.

    `a` is (m,) or (batch, m) and already includes the trailing bias 1.
    """
    M_cond, U_cond = condition_on_last_row(layer.joint, nu_sample)
    mu_b = a @ M_cond
    q = quad_form(U_cond, a)
    if np.ndim(ad.value(a)) == 1:
        return mu_b, q * layer.joint.V
    return mu_b, _column(q) * layer.joint.V


def preactivation_dist(layer: LayerPosterior, a, nu_sample=None):
    if isinstance(layer, Structured):
        return preactivation_dist_structured(layer, nu_sample, a)
    batched = np.ndim(ad.value(a)) > 1
    if isinstance(layer, Factorized):
        return a @ layer.mu, ad.square(a) @ ad.square(layer.sigma)
    if isinstance(layer, FactorizedTied):
        n = np.shape(ad.value(layer.mu))[1]
        s = ad.sum_(ad.square(a), axis=-1)
        return a @ layer.mu, (_column(s) if batched else s) * np.ones(n)
    q = quad_form(layer.beta.U, a)
    return a @ layer.beta.M, (_column(q) if batched else q) * layer.beta.V


def preactivation_sample(layer: LayerPosterior, scale, a, eps, nu_sample=None):
    """u = scale * (mu_b + sqrt(var_b) * eps), scale being the sampled tilde_tau * upsilon."""
    mu_b, var_b = preactivation_dist(layer, a, nu_sample)
    return scale * (mu_b + ad.sqrt(var_b) * eps)


# --------------------------------------------------------------------------
# noise


@dataclass
class Noise:
    """Pre-drawn standard-normal noise; every array has a leading sample axis."""

    arrays: dict

    @property
    def S(self) -> int:
        return len(next(iter(self.arrays.values())))

    def sample(self, s: int) -> dict:
        return {k: v[s] for k, v in self.arrays.items()}


def draw_noise(post: Posterior, batch_size: int, S: int, rng: np.random.Generator) -> Noise:
    spec = post.spec
    arrays = {}
    for l in range(spec.n_hidden):
        n = spec.layer_widths[l + 1]
        if spec.shrinkage:
            arrays[f"h{l}.scale"] = rng.standard_normal((S, n))
            arrays[f"h{l}.ups"] = rng.standard_normal(S)
        arrays[f"h{l}.u"] = rng.standard_normal((S, batch_size, n))
    arrays["out"] = rng.standard_normal((S, batch_size, spec.output_dim))
    if spec.regularized:
        arrays["c"] = rng.standard_normal(S)
    return Noise(arrays)


# --------------------------------------------------------------------------
# forward sampling


def sample_unit_scales(post: Posterior, l: int, params: Mapping, eps: Mapping, log_c2=None):
    """Sampled multiplier tilde_tau * upsilon per unit and the sampled nu (structured only)."""
    layer = layer_posterior(post, l, params)
    nu = None
    if isinstance(layer, Structured):
        mean, std = nu_marginal(layer)
        nu = mean + std * eps[f"h{l}.scale"]
        log_tau2 = 2.0 * nu
    else:
        tau = tau2_posterior(post, l, params)
        log_tau2 = tau.mu + tau.sigma * eps[f"h{l}.scale"]
    ups = upsilon2_posterior(post, l, params)
    log_ups2 = ups.mu + ups.sigma * eps[f"h{l}.ups"]
    return ad.exp(0.5 * log_scale2(post.spec, log_tau2, log_ups2, log_c2)), nu


def sample_outputs(post: Posterior, x, eps: Mapping, params: Mapping | None = None):
    """One locally-reparameterized draw of the network output for every row of x."""
    p = post.params if params is None else params
    spec = post.spec
    log_c2 = None
    if spec.regularized:
        c = c2_posterior(post, p)
        log_c2 = c.mu + c.sigma * eps["c"]
    z = np.asarray(x, dtype=float)
    for l in range(spec.n_hidden):
        a = ad.append_ones(z)
        layer = layer_posterior(post, l, p)
        if spec.shrinkage:
            scale, nu = sample_unit_scales(post, l, p, eps, log_c2)
        else:
            scale, nu = 1.0, None
        z = activation(spec, preactivation_sample(layer, scale, a, eps[f"h{l}.u"], nu))
    a = ad.append_ones(z)
    out = output_posterior(post, p)
    mu_f, var_f = preactivation_dist(out, a)
    return mu_f + ad.sqrt(var_f) * eps["out"]


# --------------------------------------------------------------------------
# ELBO


def _gaussian_entropy(var):
    return ad.sum_(0.5 * ad.log(var) + HALF_LOG_2PIE)


def _expected_log_std_normal(mean, var):
    return ad.sum_(-0.5 * (ad.square(mean) + var) - 0.5 * LOG_2PI)


def expected_loglik(post: Posterior, x, y, noise: Noise, params: Mapping | None = None):
    """Monte-Carlo sum over the batch of E_q[ln N(y | f, 1/gamma)], precision integrated analytically."""
    p = post.params if params is None else params
    y = np.asarray(y, dtype=float).reshape(len(x), post.spec.output_dim)
    g = gamma_posterior(post, p)
    mean_gamma = lognormal_mean(g)
    total = 0.0
    for s in range(noise.S):
        f = sample_outputs(post, x, noise.sample(s), p)
        total = total + ad.sum_(ad.square(y - f))
    sq = total / noise.S
    n_obs = y.size
    return n_obs * (0.5 * g.mu - 0.5 * LOG_2PI) - 0.5 * mean_gamma * sq


def _layer_terms(post: Posterior, l: int, p: Mapping, terms: dict) -> None:
    spec = post.spec
    layer = layer_posterior(post, l, p)
    mean, var = beta_moments(layer)
    terms[f"beta_prior_{l}"] = _expected_log_std_normal(mean, var)
    if isinstance(layer, Factorized):
        terms[f"beta_entropy_{l}"] = _gaussian_entropy(var)
    elif isinstance(layer, FactorizedTied):
        terms[f"beta_entropy_{l}"] = float(np.size(ad.value(mean)) * HALF_LOG_2PIE)
    elif isinstance(layer, SemiStructured):
        terms[f"beta_entropy_{l}"] = mn_entropy(layer.beta)
    else:
        # entropy over (beta, tau^2): Jacobian of tau^2 = exp(2 nu) is 2 exp(2 nu)
        n = layer.joint.shape[1]
        terms[f"beta_entropy_{l}"] = mn_entropy(layer.joint) + n * math.log(2.0) + 2.0 * ad.sum_(layer.joint.M[-1])
    if not spec.shrinkage:
        return
    tau = tau2_posterior(post, l, p)
    lam = post.aux[f"h{l}.lambda"]
    terms[f"tau_prior_{l}"] = ad.sum_(cross_term_lognormal_invgamma(tau, lam))
    terms[f"lambda_prior_{l}"] = float(np.sum(invgamma_cross_invgamma(lam, 0.5, 1.0 / spec.b0**2)))
    terms[f"lambda_entropy_{l}"] = float(np.sum(invgamma_moments(lam)[2]))
    if not isinstance(layer, Structured):
        terms[f"tau_entropy_{l}"] = ad.sum_(lognormal_entropy(tau))
    ups = upsilon2_posterior(post, l, p)
    vt = post.aux[f"h{l}.vartheta"]
    terms[f"upsilon_prior_{l}"] = cross_term_lognormal_invgamma(ups, vt)
    terms[f"vartheta_prior_{l}"] = float(invgamma_cross_invgamma(vt, 0.5, 1.0 / spec.bg**2))
    terms[f"upsilon_entropy_{l}"] = lognormal_entropy(ups)
    terms[f"vartheta_entropy_{l}"] = float(invgamma_moments(vt)[2])


def elbo_terms(post: Posterior, x, y, noise: Noise, n_total: int | None = None, params: Mapping | None = None) -> dict:
    """Every ELBO term; sums to the Monte-Carlo ELBO estimate."""
    p = post.params if params is None else params
    spec = post.spec
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n_total = len(x) if n_total is None else n_total
    terms = {}
    if len(x):
        terms["likelihood"] = (n_total / len(x)) * expected_loglik(post, x, y, noise, p)
    for l in range(spec.n_hidden):
        _layer_terms(post, l, p, terms)
    out = output_posterior(post, p)
    var_out = ad.square(out.sigma)
    terms["output_entropy"] = _gaussian_entropy(var_out)
    if spec.shrinkage:
        # E[ln N(w | 0, kappa^2)] is analytic under the log-normal kappa^2 factor
        kappa = kappa2_posterior(post, p)
        n_w = np.size(ad.value(out.mu))
        terms["output_prior"] = (
            -0.5 * n_w * (LOG_2PI + kappa.mu)
            - 0.5 * ad.exp(0.5 * ad.square(kappa.sigma) - kappa.mu) * ad.sum_(ad.square(out.mu) + var_out)
        )
        rho = post.aux["rho_kappa"]
        terms["kappa_prior"] = cross_term_lognormal_invgamma(kappa, rho)
        terms["rho_prior"] = float(invgamma_cross_invgamma(rho, 0.5, 1.0 / spec.b_kappa**2))
        terms["kappa_entropy"] = lognormal_entropy(kappa)
        terms["rho_entropy"] = float(invgamma_moments(rho)[2])
    else:
        terms["output_prior"] = _expected_log_std_normal(out.mu, var_out)
    if spec.regularized:
        c = c2_posterior(post, p)
        terms["c_prior"] = expected_log_invgamma_fixed(c, spec.c_a, spec.c_b)
        terms["c_entropy"] = lognormal_entropy(c)
    g = gamma_posterior(post, p)
    terms["gamma_prior"] = expected_log_gamma(g, spec.gamma_prior)
    terms["gamma_entropy"] = lognormal_entropy(g)
    return terms


def elbo_objective(post: Posterior, x, y, noise: Noise, n_total: int | None = None, params: Mapping | None = None):
    """ELBO as a single (possibly differentiable) scalar."""
    return ad.total(elbo_terms(post, x, y, noise, n_total, params).values())


def elbo_estimate(post: Posterior, x, y, noise: Noise, n_total: int | None = None) -> float:
    terms = elbo_terms(post, x, y, noise, n_total)
    vals = {k: float(np.sum(ad.value(v))) for k, v in terms.items()}
    total = math.fsum(vals.values())
    if not math.isfinite(total):
        raise TrainingFault("non-finite ELBO", vals)
    return total
