"""Generative model: priors, scale transform, weight assembly, forward pass, log joint."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .distributions import GammaParams, gamma_logpdf, invgamma_logpdf, normal_logpdf

PRIORS = ("reg_hs", "hs", "gaussian")
NONLINEARITIES = ("relu", "tanh")


class TrainingFault(FloatingPointError):
    """A non-finite objective, gradient or density was produced."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture, prior hyperparameters and likelihood.

    ``prior`` selects the regularized horseshoe (``reg_hs``), the plain
    horseshoe (``hs``, no slab) or independent N(0, 1) weights (``gaussian``).
    """

    layer_widths: tuple[int, ...]
    nonlinearity: str = "relu"
    b0: float = 1.0
    bg: float = 1e-5
    b_kappa: float = 5.0
    c_a: float = 2.0
    c_b: float = 6.0
    prior: str = "reg_hs"
    likelihood: str = "gaussian"
    gamma_prior: GammaParams = field(default_factory=lambda: GammaParams(6.0, 6.0))

    def __post_init__(self):
        widths = tuple(int(k) for k in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("need an input width, at least one hidden layer and an output width")
        if any(k < 1 for k in widths):
            raise ValueError("layer widths must be positive")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.prior not in PRIORS:
            raise ValueError(f"prior must be one of {PRIORS}")
        if self.likelihood != "gaussian":
            raise ValueError("only the gaussian likelihood is supported")
        for name in ("b0", "bg", "b_kappa", "c_a", "c_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def regularized(self) -> bool:
        return self.prior == "reg_hs"

    @property
    def shrinkage(self) -> bool:
        return self.prior in ("reg_hs", "hs")

    def fan_in(self, layer: int) -> int:
        """Rows of layer `layer`'s weight matrix (inputs plus bias)."""
        return self.layer_widths[layer] + 1

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "nonlinearity": self.nonlinearity,
            "b0": self.b0,
            "bg": self.bg,
            "b_kappa": self.b_kappa,
            "c_a": self.c_a,
            "c_b": self.c_b,
            "prior": self.prior,
            "likelihood": self.likelihood,
            "gamma_prior": [self.gamma_prior.shape, self.gamma_prior.rate],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        gp = d.pop("gamma_prior", (6.0, 6.0))
        return cls(gamma_prior=GammaParams(*gp), **d)


def activation(spec: NetworkSpec, u):
    return ad.relu(u) if spec.nonlinearity == "relu" else ad.tanh(u)


def regularized_scale(tau2, upsilon2, c2):
    """Slab-regularized unit scale c^2 tau^2 / (c^2 + tau^2 upsilon^2)."""
    return c2 * tau2 / (c2 + tau2 * upsilon2)


def log_scale2(spec: NetworkSpec, log_tau2, log_ups2, log_c2=None):
    """ln of the squared weight multiplier (tilde tau * upsilon)^2, computed stably."""
    raw = log_tau2 + log_ups2
    if not spec.regularized:
        return raw
    return raw + log_c2 - ad.logaddexp(log_c2, raw)


def assemble_weights(beta, tau2, upsilon2, c2=None):
    """Non-centered weights: column k is sqrt(tilde_tau2_k * upsilon2) * beta[:, k].

    With ``c2=None`` the unregularized horseshoe scale tau2 * upsilon2 is used.
    """
    beta = np.asarray(beta, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    if beta.ndim != 2 or tau2.shape != (beta.shape[1],):
        raise ValueError(f"shape mismatch: beta {beta.shape}, tau2 {tau2.shape}")
    eff = tau2 * upsilon2 if c2 is None else regularized_scale(tau2, upsilon2, c2) * upsilon2
    return beta * np.sqrt(eff)[None, :]


@dataclass
class SampledWeights:
    """One joint draw of the model's latent quantities (non-centered form).

    For the ``gaussian`` prior ``beta`` holds the hidden weights directly and
    the scale fields are unused.
    """

    beta: list
    tau2: list | None
    upsilon2: list | None
    w_out: np.ndarray
    kappa2: float | None
    c2: float | None
    gamma: float

    def hidden_weights(self, spec: NetworkSpec) -> list:
        if not spec.shrinkage:
            return [np.asarray(b, dtype=float) for b in self.beta]
        c2 = self.c2 if spec.regularized else None
        return [assemble_weights(b, t, u, c2) for b, t, u in zip(self.beta, self.tau2, self.upsilon2)]


def forward_weights(spec: NetworkSpec, weights: list, x):
    """Network output for explicit weight matrices (bias = last row of each)."""
    z = np.asarray(x, dtype=float)
    for W in weights[:-1]:
        z = activation(spec, ad.append_ones(z) @ W)
    return ad.append_ones(z) @ weights[-1]


def forward(spec: NetworkSpec, w: SampledWeights, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {spec.input_dim}")
    return forward_weights(spec, w.hidden_weights(spec) + [np.asarray(w.w_out, dtype=float)], x)


@dataclass
class AuxValues:
    """Point values of the half-Cauchy auxiliaries."""

    lam: list
    vartheta: list
    rho_kappa: float


def r_term(a2, lam, b):
    """ln InvGamma(a^2 | 1/2, 1/lam) + ln InvGamma(lam | 1/2, 1/b^2)."""
    return invgamma_logpdf(a2, 0.5, 1.0 / lam) + invgamma_logpdf(lam, 0.5, 1.0 / b**2)


def gaussian_loglik(y, f, gamma):
    return normal_logpdf(y, f, 1.0 / gamma)


def log_joint_terms(spec: NetworkSpec, w: SampledWeights, aux: AuxValues | None, x, y, n_total=None) -> dict:
    """Term-wise log joint density; the likelihood is rescaled by n_total / batch size."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(len(x), spec.output_dim)
    n_total = len(x) if n_total is None else n_total
    terms = {}
    f = forward(spec, w, x)
    terms["likelihood"] = float(n_total / len(x) * np.sum(gaussian_loglik(y, f, w.gamma)))
    g = spec.gamma_prior
    terms["gamma_prior"] = float(gamma_logpdf(w.gamma, g.shape, g.rate))
    if not spec.shrinkage:
        terms["weight_prior"] = float(sum(np.sum(normal_logpdf(b, 0.0, 1.0)) for b in w.beta))
        terms["output_prior"] = float(np.sum(normal_logpdf(w.w_out, 0.0, 1.0)))
        return terms
    if spec.regularized:
        terms["c_prior"] = float(invgamma_logpdf(w.c2, spec.c_a, spec.c_b))
    terms["kappa_r"] = float(r_term(w.kappa2, aux.rho_kappa, spec.b_kappa))
    terms["output_prior"] = float(np.sum(normal_logpdf(w.w_out, 0.0, w.kappa2)))
    for l in range(spec.n_hidden):
        terms[f"upsilon_r_{l}"] = float(r_term(w.upsilon2[l], aux.vartheta[l], spec.bg))
        terms[f"tau_r_{l}"] = float(np.sum(r_term(np.asarray(w.tau2[l]), np.asarray(aux.lam[l]), spec.b0)))
        terms[f"beta_prior_{l}"] = float(np.sum(normal_logpdf(w.beta[l], 0.0, 1.0)))
    return terms


def log_joint(spec: NetworkSpec, w: SampledWeights, aux: AuxValues | None, x, y, n_total=None) -> float:
    terms = log_joint_terms(spec, w, aux, x, y, n_total)
    total = math.fsum(terms.values())
    if not math.isfinite(total):
        raise TrainingFault("non-finite log joint", terms)
    return total
