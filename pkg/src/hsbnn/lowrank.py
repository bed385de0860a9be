"""Diagonal-plus-rank-one covariances and the structured matrix-normal.

Nothing here forms an m x m matrix; every operation is O(m) or O(mn).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .distributions import HALF_LOG_2PIE


@dataclass(frozen=True)
class DiagRankOne:
    """U = diag(psi) + h h^T with psi > 0."""

    psi: object
    h: object

    def __post_init__(self):
        if np.shape(ad.value(self.psi)) != np.shape(ad.value(self.h)):
            raise ValueError("psi and h must have the same length")
        if not ad.is_tensor(self.psi) and np.any(np.asarray(self.psi) <= 0):
            raise ValueError("psi entries must be positive")

    @property
    def size(self) -> int:
        return int(np.shape(ad.value(self.psi))[0])

    def diagonal(self):
        return self.psi + ad.square(self.h)


@dataclass(frozen=True)
class MatrixNormalStructured:
    """MN(M, U, diag(V)) over m x n matrices with U diagonal-plus-rank-one."""

    M: object
    U: DiagRankOne
    V: object

    def __post_init__(self):
        m, n = np.shape(ad.value(self.M))
        if self.U.size != m or np.shape(ad.value(self.V)) != (n,):
            raise ValueError(f"inconsistent shapes: M {m}x{n}, U {self.U.size}, V {np.shape(ad.value(self.V))}")
        if not ad.is_tensor(self.V) and np.any(np.asarray(self.V) <= 0):
            raise ValueError("V entries must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(np.shape(ad.value(self.M)))


def quad_form(U: DiagRankOne, a):
    """a^T U a; `a` may carry leading batch dimensions."""
    if np.shape(ad.value(a))[-1] != U.size:
        raise ValueError(f"dimension mismatch: a has {np.shape(ad.value(a))[-1]}, U has {U.size}")
    return ad.square(a) @ U.psi + ad.square(a @ U.h)


def logdet(U: DiagRankOne):
    """ln|U| via the matrix determinant lemma."""
    return ad.log(1.0 + ad.sum_(ad.square(U.h) / U.psi)) + ad.sum_(ad.log(U.psi))


def mn_entropy(q: MatrixNormalStructured):
    m, n = q.shape
    return m * n * HALF_LOG_2PIE + 0.5 * (m * ad.sum_(ad.log(q.V)) + n * logdet(q.U))


def mn_sample(q: MatrixNormalStructured, E, e0):
    """Exact draw M + (diag(sqrt psi) E + h e0^T) diag(sqrt V).

    E is (..., m, n) and e0 is (..., n); leading axes index independent draws.
    """
    m, n = q.shape
    E = np.asarray(E, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    if E.shape[-2:] != (m, n) or e0.shape[-1:] != (n,) or E.shape[:-2] != e0.shape[:-1]:
        raise ValueError("noise shapes do not match the distribution")
    psi, h, V = (ad.value(x) for x in (q.U.psi, q.U.h, q.V))
    M = ad.value(q.M)
    return M + (np.sqrt(psi)[:, None] * E + h[:, None] * e0[..., None, :]) * np.sqrt(V)


def coupling(U: DiagRankOne):
    """(h_nu / (psi_nu + h_nu^2), psi_nu / (psi_nu + h_nu^2)) for the last coordinate."""
    psi_nu, h_nu = U.psi[-1], U.h[-1]
    denom = psi_nu + ad.square(h_nu)
    return h_nu / denom, psi_nu / denom


def condition_on_last_row(q: MatrixNormalStructured, nu):
    """Condition the first m-1 rows on the last row equal to `nu`.

    Returns (M_cond, U_cond); the column covariance V is unchanged.
    """
    m, n = q.shape
    if m < 2:
        raise ValueError("need at least two rows to condition on the last")
    if np.shape(ad.value(nu)) != (n,):
        raise ValueError("nu must have one entry per column")
    gain, shrink = coupling(q.U)
    h_beta = q.U.h[:-1]
    offset = gain * (nu - q.M[-1])
    M_cond = q.M[:-1] + ad.reshape(h_beta, (m - 1, 1)) * ad.reshape(offset, (1, n))
    U_cond = DiagRankOne(q.U.psi[:-1], h_beta * ad.sqrt(shrink))
    return M_cond, U_cond
