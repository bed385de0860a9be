"""Alternating Adam / fixed-point training of the variational posterior."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import InvGammaParams, LogNormalParams, lognormal_mean_inverse
from .gradients import grad_elbo
from .model import NetworkSpec, TrainingFault
from .variational import (
    LOG_SIGMA_FLOOR,
    Noise,
    Posterior,
    draw_noise,
    init_posterior,
    kappa2_posterior,
    tau2_posterior,
    upsilon2_posterior,
)

log = logging.getLogger(__name__)

STREAMS = {"data": 0, "init": 1, "train": 2, "eval": 3, "prune": 4, "finetune": 5}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 128
    iterations: int = 1000
    mc_samples: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    unit_norm_projection: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 0 or self.mc_samples < 1:
            raise ValueError("learning_rate, batch_size and mc_samples must be positive, iterations non-negative")


class Adam:
    """Adam ascent on a dict of arrays."""

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def copy(self) -> "Adam":
        new = Adam(self.lr, self.beta1, self.beta2, self.eps)
        new.m = {k: v.copy() for k, v in self.m.items()}
        new.v = {k: v.copy() for k, v in self.v.items()}
        new.t = self.t
        return new

    def step(self, params: dict, grads: dict, names=None) -> None:
        """In-place ascent step along `grads` for the selected parameter names."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in sorted(params if names is None else names):
            # minimizer on the negated objective
            g = -grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def fixed_point_update_aux(scale_posterior: LogNormalParams, b: float) -> InvGammaParams:
    """Optimal inverse-gamma factor for the auxiliary of a half-Cauchy(0, b) scale.

    `scale_posterior` describes the squared scale; the update is
    InvGamma(1, E[1/scale^2] + 1/b^2).
    """
    rate = np.asarray(lognormal_mean_inverse(scale_posterior), dtype=float) + 1.0 / b**2
    return InvGammaParams(np.ones_like(rate), rate)


def update_auxiliaries(post: Posterior) -> None:
    spec = post.spec
    for l in range(spec.n_hidden):
        post.aux[f"h{l}.vartheta"] = fixed_point_update_aux(upsilon2_posterior(post, l), spec.bg)
        post.aux[f"h{l}.lambda"] = fixed_point_update_aux(tau2_posterior(post, l), spec.b0)
    post.aux["rho_kappa"] = fixed_point_update_aux(kappa2_posterior(post), spec.b_kappa)


def project_unit_norm(post: Posterior) -> None:
    """Renormalize each layer's psi, V and h vectors to unit Euclidean norm."""
    for l in range(post.spec.n_hidden):
        if f"h{l}.log_psi" not in post.params:
            continue
        p = post.params
        for name in (f"h{l}.log_psi", f"h{l}.log_V"):
            p[name] = p[name] - 0.5 * np.log(np.sum(np.exp(2.0 * p[name])))
        norm = np.linalg.norm(p[f"h{l}.h"])
        if norm > 0:
            p[f"h{l}.h"] = p[f"h{l}.h"] / norm


def apply_floors(post: Posterior) -> None:
    for k, v in post.params.items():
        if k.endswith("log_sigma"):
            post.params[k] = np.maximum(v, LOG_SIGMA_FLOOR)


@dataclass
class TrainState:
    posterior: Posterior
    adam: Adam
    iteration: int = 0
    elbo_trace: list = field(default_factory=list)

    def copy(self) -> "TrainState":
        return TrainState(self.posterior.copy(), self.adam.copy(), self.iteration, list(self.elbo_trace))


def init_state(spec: NetworkSpec, family: str, config: TrainConfig) -> TrainState:
    post = init_posterior(spec, family, substream(config.seed, "init"))
    if config.unit_norm_projection:
        project_unit_norm(post)
        if spec.shrinkage:
            update_auxiliaries(post)
    adam = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return TrainState(post, adam)


def train_step(
    state: TrainState,
    x,
    y,
    noise: Noise,
    n_total: int | None = None,
    unit_norm_projection: bool = True,
    grads: dict | None = None,
    trainable=None,
    grad_mask: dict | None = None,
) -> TrainState:
    """One Adam ascent step, then auxiliary fixed points, then projection.

    `grads` overrides the computed ELBO gradient (the recorded ELBO is NaN
    then); `trainable` restricts the Adam step to the named parameters and
    freezes everything else, auxiliaries included.  `grad_mask` multiplies
    the named gradients elementwise before the step.
    """
    new = state.copy()
    post = new.posterior
    if grads is None:
        try:
            value, grads = grad_elbo(post, x, y, noise, n_total)
        except ValueError as exc:
            raise TrainingFault(f"ELBO evaluation failed: {exc}", {"iteration": new.iteration}) from exc
    else:
        value = float("nan")
    if grad_mask:
        grads = {k: g * grad_mask[k] if k in grad_mask else g for k, g in grads.items()}
    new.adam.step(post.params, grads, trainable)
    bad = [k for k, v in post.params.items() if not np.all(np.isfinite(v))]
    if bad:
        raise TrainingFault("non-finite parameters after step", {"parameters": bad, "iteration": new.iteration})
    if trainable is None:
        apply_floors(post)
        if post.spec.shrinkage:
            try:
                update_auxiliaries(post)
            except ValueError as exc:  # overflowed moments fail parameter validation
                raise TrainingFault(f"auxiliary update failed: {exc}", {"iteration": new.iteration}) from exc
        if unit_norm_projection:
            project_unit_norm(post)
    new.iteration += 1
    new.elbo_trace.append(value)
    return new


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled every epoch."""
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def train(
    spec: NetworkSpec,
    family: str,
    config: TrainConfig,
    x,
    y,
    state: TrainState | None = None,
    trainable=None,
    stream: str = "train",
    progress_every: int = 0,
    grad_mask: dict | None = None,
):
    """Run `config.iterations` minibatch steps; returns (state, ELBO trace)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(x), spec.output_dim)
    if state is None:
        state = init_state(spec, family, config)
    rng = substream(config.seed, stream)
    batches = minibatches(len(x), config.batch_size, rng)
    n = len(x)
    trace = []
    for it in range(config.iterations):
        idx = next(batches)
        noise = draw_noise(state.posterior, len(idx), config.mc_samples, rng)
        state = train_step(
            state, x[idx], y[idx], noise, n, config.unit_norm_projection, trainable=trainable, grad_mask=grad_mask
        )
        trace.append(state.elbo_trace[-1])
        if progress_every and (it + 1) % progress_every == 0:
            recent = trace[-progress_every:]
            log.info("iter %d  elbo %.4f", it + 1, float(np.mean(recent)))
    return state, trace
