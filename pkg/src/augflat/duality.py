"""Input/parameter perturbation duality through first-order compensation.

For a sample ``x`` the linearised outputs agree, ``J_x delta = J_theta Delta``,
when ``delta = pinv(J_x) J_theta Delta`` (or the mirror image). The norm of
that map is at most ``sigma_max(J_theta) / sigma_min(J_x)``, so a ball of
radius ``max_x ratio * gamma`` in one space covers every ``gamma``-perturbation
in the other. This module computes those radii, performs the translations,
and measures how far the exact (non-linearised) outputs disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional

import numpy as np

from . import linalg
from ._rng import child_rng, uniform_ball
from .data import Dataset
from .nnet import forward, jacobian_input, jacobian_params

Direction = Literal["param_to_input", "input_to_param"]


def _points(dataset) -> np.ndarray:
    if isinstance(dataset, Dataset):
        return dataset.x
    x = np.asarray(dataset, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


@dataclass(frozen=True)
class CompensatoryRadius:
    direction: Direction
    gamma: float
    radius: float
    per_point_ratios: list[tuple[int, float]]

    @classmethod
    def from_ratios(cls, direction: Direction, gamma: float,
                    ratios: Iterable[float]) -> "CompensatoryRadius":
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        pairs = [(i, float(r)) for i, r in enumerate(ratios)]
        if not pairs:
            raise ValueError("need at least one point")
        if any(not r > 0 for _, r in pairs):
            raise ValueError("singular-value ratios must be positive")
        return cls(direction, float(gamma), max(r for _, r in pairs) * gamma, pairs)

    @property
    def max_ratio(self) -> float:
        return max(r for _, r in self.per_point_ratios)


def point_ratio(jx: np.ndarray, jtheta: np.ndarray, direction: Direction,
                index: int = 0) -> float:
    """``sigma_max(J_theta)/sigma_min(J_x)`` or ``sigma_max(J_x)/sigma_min(J_theta)``."""
    ex = linalg.sigma_extrema(jx)
    et = linalg.sigma_extrema(jtheta)
    if direction == "param_to_input":
        if ex.rank_deficient:
            raise linalg.RankDeficientError(
                f"input Jacobian at sample {index} is numerically rank-deficient "
                f"(sigma_min={ex.smin:.3g})")
        return et.smax / ex.smin
    if direction == "input_to_param":
        if et.rank_deficient:
            raise linalg.RankDeficientError(
                f"parameter Jacobian at sample {index} is numerically rank-deficient "
                f"(sigma_min={et.smin:.3g})")
        return ex.smax / et.smin
    raise ValueError(f"unknown direction {direction!r}")


def singular_ratios(model, params, dataset, direction: Direction) -> list[float]:
    out = []
    for i, x in enumerate(_points(dataset)):
        jx = jacobian_input(model, params, x)
        jt = jacobian_params(model, params, x)
        out.append(point_ratio(jx, jt, direction, i))
    return out


def compensatory_input_radius(model, params, dataset, gamma: float) -> CompensatoryRadius:
    """Input-space radius covering every parameter perturbation of norm <= gamma."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    ratios = singular_ratios(model, params, dataset, "param_to_input")
    return CompensatoryRadius.from_ratios("param_to_input", gamma, ratios)


def compensatory_param_radius(model, params, dataset, gamma: float) -> CompensatoryRadius:
    """Parameter-space radius covering every input perturbation of norm <= gamma."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    ratios = singular_ratios(model, params, dataset, "input_to_param")
    return CompensatoryRadius.from_ratios("input_to_param", gamma, ratios)


def _solve(a: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    if linalg.sigma_extrema(a).rank_deficient:
        raise linalg.RankDeficientError(f"{what} Jacobian is numerically rank-deficient")
    return linalg.pinv(a) @ rhs


def translate_param_to_input(model, params, x, Delta) -> np.ndarray:
    """Minimum-norm input shift whose linear effect matches the parameter shift."""
    Delta = np.asarray(Delta, dtype=np.float64)
    jx = jacobian_input(model, params, x)
    jt = jacobian_params(model, params, x)
    return _solve(jx, jt @ Delta, "input")


def translate_input_to_param(model, params, x, delta) -> np.ndarray:
    """Minimum-norm parameter shift whose linear effect matches the input shift."""
    delta = np.asarray(delta, dtype=np.float64)
    jx = jacobian_input(model, params, x)
    jt = jacobian_params(model, params, x)
    return _solve(jt, jx @ delta, "parameter")


@dataclass(frozen=True)
class DualityCheck:
    delta: np.ndarray
    Delta: np.ndarray
    residual: float
    first_order_scale: float


def duality_residual(model, params, x, Delta, delta) -> DualityCheck:
    """``||f(x + delta; theta) - f(x; theta + Delta)||`` with exact forward passes."""
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    Delta = np.asarray(Delta, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if not (np.all(np.isfinite(Delta)) and np.all(np.isfinite(delta))):
        raise ValueError("perturbations must be finite")
    a = forward(model, params, x + delta)
    b = forward(model, params + Delta, x)
    return DualityCheck(delta, Delta, float(np.linalg.norm(a - b)), float(np.linalg.norm(Delta)))


@dataclass(frozen=True)
class CoverageResult:
    """Outcome of sampling perturbations against a compensatory radius."""

    direction: Direction
    radius: CompensatoryRadius
    n_samples: int
    violations: int
    max_norm: float
    norms: np.ndarray = field(repr=False)


def sample_bound_coverage(model, params, dataset, gamma: float, n_samples: int,
                          direction: Direction = "param_to_input", seed: int = 0,
                          slack: float = 1e-8) -> CoverageResult:
    """Draw perturbations uniformly in the gamma-ball and count translated norms
    exceeding the compensatory radius by more than ``slack``.

    Samples are spread evenly over the points; each point owns its generator.
    """
    xs = _points(dataset)
    per_point = max(1, math.ceil(n_samples / len(xs)))
    ratios, norms = [], []
    for i, x in enumerate(xs):
        jx = jacobian_input(model, params, x)
        jt = jacobian_params(model, params, x)
        ratios.append(point_ratio(jx, jt, direction, i))
        rng = child_rng(seed, i)
        if direction == "param_to_input":
            pert = uniform_ball(rng, per_point, jt.shape[1], gamma)
            moved = (linalg.pinv(jx) @ (jt @ pert.T)).T
        else:
            pert = uniform_ball(rng, per_point, jx.shape[1], gamma)
            moved = (linalg.pinv(jt) @ (jx @ pert.T)).T
        norms.append(np.linalg.norm(moved, axis=1))
    rad = CompensatoryRadius.from_ratios(direction, gamma, ratios)
    allnorms = np.concatenate(norms)
    viol = int(np.sum(allnorms > rad.radius + slack))
    return CoverageResult(direction, rad, len(allnorms), viol, float(allnorms.max()), allnorms)


def gamma_theta_from_ratio(max_ratio: float, gamma_A: float) -> float:
    if not gamma_A > 0 or not max_ratio > 0:
        raise ValueError("gamma_A and the ratio must be positive")
    return gamma_A / max_ratio


def gamma_theta(model, params, dataset, gamma_A: float) -> float:
    """Parameter-space radius matching an augmentation support radius gamma_A."""
    if not gamma_A > 0:
        raise ValueError("gamma_A must be positive")
    ratios = singular_ratios(model, params, dataset, "param_to_input")
    return gamma_theta_from_ratio(max(ratios), gamma_A)


def covering_log_count(diam_theta: float, gamma_theta: float, p: int) -> float:
    """``log10 M`` for ``M = ceil(diam / gamma_theta) ** p``, without forming M."""
    if not (diam_theta > 0 and gamma_theta > 0 and p > 0):
        raise ValueError("diameter, radius and dimension must be positive")
    cells = max(1, math.ceil(diam_theta / gamma_theta))
    return p * math.log10(cells)


def div_total_variation(p_hist, q_hist, atol: float = 1e-9) -> float:
    """Twice the largest event-probability gap, i.e. the L1 distance of two pmfs."""
    p = np.asarray(p_hist, dtype=np.float64)
    q = np.asarray(q_hist, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("distributions must share the same finite support")
    for h in (p, q):
        if np.any(h < 0) or abs(h.sum() - 1.0) > atol:
            raise ValueError("distributions must be nonnegative and sum to 1")
    return float(np.abs(p - q).sum())


@dataclass(frozen=True)
class CoveringReport:
    """Quantities entering the covering-number generalization bound."""

    gamma_A: float
    gamma_Theta: float
    log10_M: float
    diam_Theta: float
    p: int
    div_estimate: Optional[float] = None


def covering_report(model, params, dataset, gamma_A: float, diam_theta: float | None = None,
                    p_hist=None, q_hist=None) -> CoveringReport:
    """gamma_Theta, the covering count and optionally a toy divergence.

    ``diam_theta`` defaults to twice the parameter norm.
    """
    params = np.asarray(params, dtype=np.float64)
    g = gamma_theta(model, params, dataset, gamma_A)
    diam = 2.0 * float(np.linalg.norm(params)) if diam_theta is None else float(diam_theta)
    div = None
    if p_hist is not None and q_hist is not None:
        div = div_total_variation(p_hist, q_hist)
    p = len(params)
    return CoveringReport(gamma_A, g, covering_log_count(diam, g, p), diam, p, div)
