"""Unit pruning by the posterior probability of a negligible scale."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .distributions import InvGammaParams, LogNormalParams, lognormal_product_cdf
from .lowrank import mn_sample
from .model import log_scale2
from .trainer import Adam, TrainConfig, TrainState, train
from .variational import (
    Factorized,
    FactorizedTied,
    Posterior,
    Structured,
    c2_posterior,
    layer_posterior,
    tau2_posterior,
    upsilon2_posterior,
)


@dataclass(frozen=True)
class PruneConfig:
    delta: float = 1e-3
    p0: float = 0.9

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")


def prune_decision(tau2_post: LogNormalParams, upsilon2_post: LogNormalParams, cfg: PruneConfig):
    """(P(tau * upsilon < delta), keep flag) per unit.

    tau * upsilon < delta exactly when tau^2 upsilon^2 < delta^2, so the
    probability is the log-normal product CDF of the squared scales.
    """
    cdf = np.clip(np.asarray(lognormal_product_cdf(tau2_post, upsilon2_post, cfg.delta**2), dtype=float), 0.0, 1.0)
    return cdf, cdf <= cfg.p0


# --------------------------------------------------------------------------
# expected weights


def _lognormal_draw(p: LogNormalParams, eps):
    return np.asarray(p.mu, dtype=float) + np.asarray(p.sigma, dtype=float) * eps


def _unit_scales(post: Posterior, l: int, log_tau2: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """tau~ * upsilon for given ln tau^2 draws (S, n); upsilon and c are drawn here."""
    spec = post.spec
    S = log_tau2.shape[0]
    log_ups2 = _lognormal_draw(upsilon2_posterior(post, l), rng.standard_normal((S, 1)))
    log_c2 = _lognormal_draw(c2_posterior(post), rng.standard_normal((S, 1))) if spec.regularized else None
    return np.exp(0.5 * log_scale2(spec, log_tau2, log_ups2, log_c2))


def weight_draws(post: Posterior, l: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """S joint draws of the incident weight matrix of hidden layer l, shape (S, m, n)."""
    layer = layer_posterior(post, l)
    m, n = post.layer_shape(l)
    if isinstance(layer, Structured):
        B = mn_sample(layer.joint, rng.standard_normal((S, m + 1, n)), rng.standard_normal((S, n)))
        beta, log_tau2 = B[:, :-1, :], 2.0 * B[:, -1, :]
    else:
        if isinstance(layer, Factorized):
            beta = np.asarray(layer.mu) + np.asarray(layer.sigma) * rng.standard_normal((S, m, n))
        elif isinstance(layer, FactorizedTied):
            beta = np.asarray(layer.mu) + rng.standard_normal((S, m, n))
        else:
            beta = mn_sample(layer.beta, rng.standard_normal((S, m, n)), rng.standard_normal((S, n)))
        if not post.spec.shrinkage:
            return beta
        log_tau2 = _lognormal_draw(tau2_posterior(post, l), rng.standard_normal((S, n)))
    return beta * _unit_scales(post, l, log_tau2, rng)[:, None, :]


def _conditional_mean_draws(post: Posterior, l: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of E[w | scales], shape (S, m, n).

    Given tau, upsilon and c the weight is linear in beta, so beta can be
    replaced by its conditional mean. For the joint family that mean moves
    with nu = ln tau along the regression slope U[:, nu] / U[nu, nu].
    """
    layer = layer_posterior(post, l)
    m, n = post.layer_shape(l)
    if isinstance(layer, Structured):
        q = layer.joint
        M = np.asarray(ad.value(q.M), dtype=float)
        psi, h, V = (np.asarray(ad.value(x), dtype=float) for x in (q.U.psi, q.U.h, q.V))
        u_nu = psi[-1] + h[-1] ** 2
        slope = h[:-1] * h[-1] / u_nu
        dev = np.sqrt(V * u_nu) * rng.standard_normal((S, n))
        cond = M[:-1] + slope[:, None] * dev[:, None, :]
        log_tau2 = 2.0 * (M[-1] + dev)
    else:
        mean = layer.mu if isinstance(layer, (Factorized, FactorizedTied)) else layer.beta.M
        cond = np.broadcast_to(np.asarray(ad.value(mean), dtype=float), (S, m, n))
        if not post.spec.shrinkage:
            return cond
        log_tau2 = _lognormal_draw(tau2_posterior(post, l), rng.standard_normal((S, n)))
    return cond * _unit_scales(post, l, log_tau2, rng)[:, None, :]


def expected_weights(post: Posterior, l: int, S: int = 200, rng: np.random.Generator | None = None, chunk: int = 20000):
    """Monte-Carlo E[w_l] and its per-entry standard error, both (m, n).

    Only the scales are sampled (beta is integrated out given them), so the
    error does not carry the spread of beta. Units that are switched off
    have tiny expected weights, and plain joint draws would bury them in noise.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    rng = rng or np.random.default_rng(0)
    m, n = post.layer_shape(l)
    total = np.zeros((m, n))
    total_sq = np.zeros((m, n))
    done = 0
    while done < S:
        k = min(chunk, S - done)
        w = _conditional_mean_draws(post, l, k, rng)
        total += w.sum(axis=0)
        total_sq += np.square(w).sum(axis=0)
        done += k
    mean = total / S
    var = np.maximum(total_sq / S - np.square(mean), 0.0)
    return mean, np.sqrt(var / S)


def expected_weight_norm(post: Posterior, l: int, S: int = 200, rng: np.random.Generator | None = None) -> np.ndarray:
    """||E[w_kl]||_2 for every unit k of hidden layer l (bias entry included)."""
    mean, _ = expected_weights(post, l, S, rng)
    return np.linalg.norm(mean, axis=0)


# --------------------------------------------------------------------------
# reports


@dataclass
class LayerPrune:
    cdf: np.ndarray
    keep: np.ndarray
    weight_norm: np.ndarray
    forced: bool = False

    @property
    def kept(self) -> int:
        return int(np.sum(self.keep))

    @property
    def total(self) -> int:
        return int(self.keep.size)

    @property
    def compression(self) -> float:
        return self.kept / self.total

    def to_dict(self) -> dict:
        return {
            "cdf": [float(v) for v in self.cdf],
            "keep": [bool(v) for v in self.keep],
            "weight_norm": [float(v) for v in self.weight_norm],
            "kept": self.kept,
            "total": self.total,
            "compression": self.compression,
            "forced_keep": self.forced,
        }


@dataclass
class PruneReport:
    config: PruneConfig
    layers: list = field(default_factory=list)
    max_prediction_deviation: float | None = None

    @property
    def kept(self) -> int:
        return sum(layer.kept for layer in self.layers)

    @property
    def total(self) -> int:
        return sum(layer.total for layer in self.layers)

    @property
    def compression(self) -> float:
        return self.kept / self.total if self.total else 1.0

    def to_dict(self) -> dict:
        return {
            "delta": self.config.delta,
            "p0": self.config.p0,
            "layers": [layer.to_dict() for layer in self.layers],
            "kept": self.kept,
            "total": self.total,
            "compression": self.compression,
            "max_prediction_deviation": self.max_prediction_deviation,
        }


def prune_report(post: Posterior, cfg: PruneConfig | None = None, S: int = 200, rng=None) -> PruneReport:
    """Apply the decision rule to every hidden layer.

    When the rule would drop a whole layer, the unit with the smallest CDF
    survives and the layer is flagged.
    """
    cfg = cfg or PruneConfig()
    if not post.spec.shrinkage:
        raise ValueError("pruning needs a shrinkage prior")
    rng = rng or np.random.default_rng(0)
    report = PruneReport(cfg)
    for l in range(post.spec.n_hidden):
        cdf, keep = prune_decision(tau2_posterior(post, l), upsilon2_posterior(post, l), cfg)
        cdf = np.atleast_1d(cdf)
        keep = np.atleast_1d(keep).copy()
        forced = not keep.any()
        if forced:
            keep[int(np.argmin(cdf))] = True
        report.layers.append(LayerPrune(cdf, keep, expected_weight_norm(post, l, S, rng), forced))
    return report


# --------------------------------------------------------------------------
# surgery


def _take_aux(aux: InvGammaParams, idx) -> InvGammaParams:
    return InvGammaParams(np.asarray(aux.shape)[idx], np.asarray(aux.rate)[idx])


def _keep_columns(post: Posterior, l: int, keep: np.ndarray, out: Posterior) -> None:
    p = out.params
    for name in ("mu", "log_sigma", "M"):
        key = f"h{l}.{name}"
        if key in p:
            p[key] = p[key][:, keep]
    for name in ("log_V", "tau_mu", "tau_log_sigma"):
        key = f"h{l}.{name}"
        if key in p:
            p[key] = p[key][keep]
    if f"h{l}.lambda" in out.aux:
        out.aux[f"h{l}.lambda"] = _take_aux(out.aux[f"h{l}.lambda"], keep)


def _keep_input_rows(post: Posterior, l: int, keep: np.ndarray, out: Posterior) -> None:
    """Drop the input rows of layer l (the output layer when l == n_hidden)."""
    rows = np.concatenate([np.flatnonzero(keep), [keep.size]])  # bias row survives
    p = out.params
    if l == post.spec.n_hidden:
        for key in ("out.mu", "out.log_sigma"):
            p[key] = p[key][rows]
        return
    if post.family == "structured":
        rows = np.concatenate([rows, [keep.size + 1]])  # the log-scale row
    for name in ("mu", "log_sigma", "M"):
        key = f"h{l}.{name}"
        if key in p:
            p[key] = p[key][rows]
    for name in ("log_psi", "h"):
        key = f"h{l}.{name}"
        if key in p:
            p[key] = p[key][rows]


def apply_prune(post: Posterior, report: PruneReport) -> Posterior:
    """New posterior without the dropped units; the input is left untouched."""
    if len(report.layers) != post.spec.n_hidden:
        raise ValueError("report does not match the network depth")
    out = post.copy()
    widths = list(post.spec.layer_widths)
    for l, layer in enumerate(report.layers):
        keep = np.asarray(layer.keep, dtype=bool)
        if keep.size != widths[l + 1]:
            raise ValueError(f"report for layer {l} has {keep.size} units, network has {widths[l + 1]}")
        _keep_columns(post, l, keep, out)
        _keep_input_rows(post, l + 1, keep, out)
        widths[l + 1] = int(keep.sum())
    out.spec = dataclasses.replace(post.spec, layer_widths=tuple(widths))
    return out


# --------------------------------------------------------------------------
# fine-tuning


def mean_parameters(post: Posterior) -> tuple[list, dict]:
    """Names of the weight-mean parameters and masks that exclude log-scale rows."""
    names, masks = [], {}
    for l in range(post.spec.n_hidden):
        layer = layer_posterior(post, l)
        if isinstance(layer, (Factorized, FactorizedTied)):
            names.append(f"h{l}.mu")
        else:
            key = f"h{l}.M"
            names.append(key)
            if isinstance(layer, Structured):
                mask = np.ones_like(post.params[key])
                mask[-1] = 0.0
                masks[key] = mask
    names.append("out.mu")
    return names, masks


def fine_tune(post: Posterior, config: TrainConfig, x, y, iterations: int | None = None) -> Posterior:
    """Adam on the weight means only; scales, variances and auxiliaries stay frozen."""
    iterations = config.iterations if iterations is None else iterations
    if iterations == 0:
        return post.copy()
    cfg = dataclasses.replace(config, iterations=iterations)
    names, masks = mean_parameters(post)
    state = TrainState(post.copy(), Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps))
    state, _ = train(post.spec, post.family, cfg, x, y, state=state, trainable=names, stream="finetune", grad_mask=masks)
    return state.posterior


def prediction_deviation(before: Posterior, after: Posterior, x, S: int = 200, seed: int = 0) -> float:
    """Max |difference| of Monte-Carlo predictive means (standardized units)."""
    from .evaluation import predictive

    a = predictive(before, x, S, np.random.default_rng(seed)).mean
    b = predictive(after, x, S, np.random.default_rng(seed)).mean
    return float(np.max(np.abs(a - b)))
