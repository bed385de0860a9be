"""Gradients of the sampled ELBO and their finite-difference certification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .model import TrainingFault
from .variational import Noise, Posterior, elbo_objective


class ParamVector:
    """Stable flat indexing of a name -> array parameter mapping."""

    def __init__(self, params: Mapping[str, np.ndarray]):
        self.names = sorted(params)
        self.shapes = {k: np.shape(params[k]) for k in self.names}
        self.offsets = {}
        off = 0
        for k in self.names:
            self.offsets[k] = off
            off += int(np.prod(self.shapes[k], dtype=int))
        self.size = off

    def flatten(self, params: Mapping[str, np.ndarray]) -> np.ndarray:
        if not self.names:
            return np.zeros(0)
        return np.concatenate([np.ravel(np.asarray(params[k], dtype=float)) for k in self.names])

    def unflatten(self, vec: np.ndarray) -> dict:
        out = {}
        for k in self.names:
            n = int(np.prod(self.shapes[k], dtype=int))
            out[k] = np.array(vec[self.offsets[k]:self.offsets[k] + n]).reshape(self.shapes[k])
        return out

    def locate(self, i: int) -> tuple[str, tuple]:
        """Parameter name and array index of flat coordinate i."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        for k in reversed(self.names):
            if self.offsets[k] <= i:
                return k, np.unravel_index(i - self.offsets[k], self.shapes[k]) if self.shapes[k] else ()
        raise IndexError(i)


def value_and_grad(objective: Callable, params: Mapping[str, np.ndarray]):
    """Evaluate `objective` on tensor leaves and return (value, name -> gradient)."""
    leaves = {k: ad.Tensor(np.array(v, dtype=float)) for k, v in params.items()}
    out = objective(leaves)
    if not ad.is_tensor(out):
        return float(out), {k: np.zeros(np.shape(v)) for k, v in params.items()}
    out.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros(t.shape)).reshape(t.shape) for k, t in leaves.items()}
    return float(out.value), grads


def grad_elbo(post: Posterior, x, y, noise: Noise, n_total: int | None = None):
    """(ELBO value, gradient mapping) of the ELBO with the given frozen noise."""
    val, grads = value_and_grad(lambda p: elbo_objective(post, x, y, noise, n_total, p), post.params)
    if not np.isfinite(val):
        raise TrainingFault("non-finite ELBO")
    for k in sorted(grads):
        bad = np.flatnonzero(~np.isfinite(grads[k]))
        if bad.size:
            raise TrainingFault(f"non-finite gradient in {k}", {"parameter": k, "index": int(bad[0])})
    return val, grads


@dataclass
class FiniteDiffReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    failing: list
    max_rel_error: float
    mean_rel_error: float
    schema: ParamVector

    @property
    def ok(self) -> bool:
        return not self.failing

    def describe_failures(self, limit: int = 10) -> list[str]:
        out = []
        for i in self.failing[:limit]:
            name, idx = self.schema.locate(i)
            out.append(f"{name}{[int(j) for j in idx]}: analytic={self.analytic[i]:.6e} numeric={self.numeric[i]:.6e}")
        return out


def finite_diff_check(
    objective: Callable,
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    names: list | None = None,
) -> FiniteDiffReport:
    """Compare reverse-mode gradients of `objective` with central differences.

    A coordinate fails when |analytic - numeric| exceeds the looser of
    rtol * |numeric| and atol.  `names` restricts the check to a subset.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    schema = ParamVector(params)
    _, grads = value_and_grad(objective, params)
    analytic = schema.flatten(grads)
    base = schema.flatten(params)
    numeric = np.full_like(base, np.nan)
    keep = set(schema.names if names is None else names)
    for k in schema.names:
        if k not in keep:
            continue
        start = schema.offsets[k]
        for j in range(int(np.prod(schema.shapes[k], dtype=int))):
            i = start + j
            vals = []
            for sgn in (1.0, -1.0):
                vec = base.copy()
                vec[i] += sgn * step
                vals.append(float(ad.value(objective(schema.unflatten(vec)))))
            numeric[i] = (vals[0] - vals[1]) / (2.0 * step)
    checked = ~np.isnan(numeric)
    diff = np.abs(analytic - numeric)
    # relative to |numeric|, with the absolute tolerance acting as a floor
    rel = np.where(checked, diff / np.maximum(np.abs(numeric), atol / rtol), 0.0)
    failing = [int(i) for i in np.flatnonzero(checked & (rel > rtol))]
    rel_checked = rel[checked]
    return FiniteDiffReport(
        analytic=analytic,
        numeric=numeric,
        rel_error=rel,
        failing=failing,
        max_rel_error=float(rel_checked.max()) if rel_checked.size else 0.0,
        mean_rel_error=float(rel_checked.mean()) if rel_checked.size else 0.0,
        schema=schema,
    )


def check_elbo_gradients(post: Posterior, x, y, noise: Noise, n_total=None, **kwargs) -> FiniteDiffReport:
    return finite_diff_check(lambda p: elbo_objective(post, x, y, noise, n_total, p), post.params, **kwargs)
