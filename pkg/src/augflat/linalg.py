"""Dense SVD, pseudoinverse and singular-value extrema for short, wide matrices.

Jacobians here are ``c x m`` with few rows and possibly very many columns.
Wide inputs are reduced with an economic QR of the transpose,
``A^T = Q R``, so only the small ``c x c`` factor ``R^T`` goes through LAPACK's
SVD; ``V`` is then ``Q V_R``. This keeps the cost at ``O(m c^2)`` without
squaring the condition number the way a Gram-matrix eigendecomposition would.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

RANK_CUTOFF = 1e-12
_WIDE_RATIO = 4


class SvdConvergenceError(np.linalg.LinAlgError):
    pass


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with k = min(rows, cols).

    ``u`` is ``rows x k``, ``vt`` is ``k x cols``; for the short-wide matrices
    used here ``u`` is square and orthogonal.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def _check(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _lapack_svd(a):
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge: {exc}") from exc


def svd(a) -> SvdResult:
    a = _check(a)
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        raise ValueError("empty matrix")
    if cols >= _WIDE_RATIO * rows:
        q, r = np.linalg.qr(a.T, mode="reduced")  # q: cols x rows
        u, s, vrt = _lapack_svd(r.T)
        vt = vrt @ q.T
    elif rows >= _WIDE_RATIO * cols:
        t = svd(a.T)
        u, s, vt = t.vt.T, t.sigma, t.u.T
    else:
        u, s, vt = _lapack_svd(a)
    return SvdResult(u, s, vt)


def singular_values(a) -> np.ndarray:
    """Descending singular values (min(rows, cols) of them)."""
    a = _check(a)
    rows, cols = a.shape
    if cols >= _WIDE_RATIO * rows:
        a = np.linalg.qr(a.T, mode="r").T
    elif rows >= _WIDE_RATIO * cols:
        a = np.linalg.qr(a, mode="r")
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge: {exc}") from exc


def pinv(a, rcond: float = RANK_CUTOFF) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below ``rcond * sigma_max`` are dropped."""
    res = svd(a)
    smax = res.sigma[0] if res.sigma.size else 0.0
    keep = res.sigma > rcond * smax
    inv = np.zeros_like(res.sigma)
    inv[keep] = 1.0 / res.sigma[keep]
    return (res.vt.T * inv) @ res.u.T


class SigmaExtrema(NamedTuple):
    smin: float
    smax: float

    @property
    def rank_deficient(self) -> bool:
        return not self.smin > RANK_CUTOFF * self.smax

    @property
    def condition(self) -> float:
        return self.smax / self.smin if self.smin > 0 else float("inf")


def sigma_extrema(a) -> SigmaExtrema:
    """Smallest and largest of the min(rows, cols) singular values."""
    s = singular_values(a)
    return SigmaExtrema(float(s[-1]), float(s[0]))
