"""Flatness of a trained parameter vector.

Every estimator works on a *risk surface*: a callable ``risk(theta) -> float``
with a ``risk.grad(theta)`` method. :class:`augflat.nnet.EmpiricalRisk` is the
usual one; closed-form surfaces are handy for checking the estimators.

Monte-Carlo estimates use antithetic pairs ``(z, -z)`` and common random
numbers across the radii of a binary search, so results are deterministic in
``cfg.seed`` and the searches see a monotone feasibility test on symmetric
surfaces.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Protocol

import numpy as np

from ._rng import child_rng, unit_directions, uniform_ball
from .nnet import EmpiricalRisk


class RiskSurface(Protocol):
    def __call__(self, params: np.ndarray) -> float: ...

    def grad(self, params: np.ndarray) -> np.ndarray: ...


class FunctionRisk:
    """Wrap plain ``value`` / ``grad`` callables as a risk surface."""

    def __init__(self, value: Callable[[np.ndarray], float],
                 grad: Callable[[np.ndarray], np.ndarray] | None = None):
        self._value = value
        self._grad = grad

    def __call__(self, params):
        return float(self._value(np.asarray(params, dtype=np.float64)))

    def grad(self, params):
        if self._grad is None:
            return np.zeros_like(np.asarray(params, dtype=np.float64))
        return np.asarray(self._grad(np.asarray(params, dtype=np.float64)), dtype=np.float64)


@dataclass(frozen=True)
class FlatnessConfig:
    tau: float = 0.05
    sigma_lpf: float = 0.01
    rho_sharp: float = 0.1
    mc_samples: int = 64
    search: tuple[float, float, int] = (1e-4, 1.0, 20)
    tol_b: float = 1e-3
    seed: int = 0
    b_search: Optional[tuple[float, float, int]] = None
    sharp_restarts: int = 5
    sharp_steps: int = 20
    b_probes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "search", tuple(self.search))
        if self.b_search is not None:
            object.__setattr__(self, "b_search", tuple(self.b_search))
        for name in ("tau", "sigma_lpf", "rho_sharp", "tol_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        for lo, hi, iters in filter(None, (self.search, self.b_search)):
            if not 0 < lo < hi or iters < 1:
                raise ValueError("search needs 0 < lo < hi and iters >= 1")
        if self.sharp_restarts < 1 or self.sharp_steps < 0 or self.b_probes < 0:
            raise ValueError("invalid ascent budget")

    @classmethod
    def preset(cls, name: str, **overrides) -> "FlatnessConfig":
        """``cifar`` (tau=0.05, sigma=0.01, rho=0.1) or the looser ``inet``
        (tau=0.35, rho=1.0)."""
        presets = {
            "cifar": dict(tau=0.05, sigma_lpf=0.01, rho_sharp=0.1),
            "inet": dict(tau=0.35, sigma_lpf=0.01, rho_sharp=1.0),
        }
        if name not in presets:
            raise ValueError(f"unknown flatness preset {name!r}")
        return cls(**{**presets[name], **overrides})

    def with_(self, **kw) -> "FlatnessConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class SearchResult:
    value: float
    lo: float
    hi: float
    saturated: Optional[str] = None  # "flat" (pinned at hi) or "sharp" (pinned at lo)


def _bisect(feasible: Callable[[float], bool], lo: float, hi: float, iters: int) -> SearchResult:
    """Largest feasible point of [lo, hi] to within (hi - lo) / 2**iters."""
    if feasible(hi):
        return SearchResult(hi, hi, hi, "flat")
    if not feasible(lo):
        return SearchResult(lo, lo, lo, "sharp")
    a, b = lo, hi
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if feasible(mid):
            a = mid
        else:
            b = mid
    return SearchResult(a, a, b)


def _antithetic(rng, pairs: int, dim: int) -> np.ndarray:
    z = rng.normal(size=(pairs, dim))
    return np.concatenate([z, -z])


def _check_finite(v: float) -> float:
    if not np.isfinite(v):
        raise FloatingPointError("non-finite loss while probing the surface")
    return v


@dataclass(frozen=True)
class PacBayesResult:
    mu: float
    sigma_star: float
    saturated: Optional[str]
    deviation: float
    bracket: tuple[float, float]


def pac_bayes_mu(risk: RiskSurface, params, cfg: FlatnessConfig) -> PacBayesResult:
    """``1 / sigma*`` for the largest sigma with
    ``|E[risk(theta + sigma z)] - risk(theta)| <= tau``, z standard normal."""
    params = np.asarray(params, dtype=np.float64)
    base = _check_finite(risk(params))
    z = _antithetic(child_rng(cfg.seed, 1), max(1, cfg.mc_samples // 2), params.size)

    def deviation(s):
        vals = [_check_finite(risk(params + s * zi)) for zi in z]
        return abs(float(np.mean(vals)) - base)

    lo, hi, iters = cfg.search
    res = _bisect(lambda s: deviation(s) <= cfg.tau, lo, hi, int(iters))
    return PacBayesResult(1.0 / res.value, res.value, res.saturated,
                          deviation(res.value), (res.lo, res.hi))


@dataclass(frozen=True)
class LpfResult:
    value: float
    stderr: float


def lpf(risk: RiskSurface, params, cfg: FlatnessConfig) -> LpfResult:
    """Gaussian-smoothed risk ``E[risk(theta + sigma z)]`` with its standard error."""
    params = np.asarray(params, dtype=np.float64)
    pairs = max(1, cfg.mc_samples // 2)
    z = _antithetic(child_rng(cfg.seed, 2), pairs, params.size)
    vals = np.array([_check_finite(risk(params + cfg.sigma_lpf * zi)) for zi in z])
    pair_means = 0.5 * (vals[:pairs] + vals[pairs:])
    se = float(pair_means.std(ddof=1) / np.sqrt(pairs)) if pairs > 1 else 0.0
    return LpfResult(float(pair_means.mean()), se)


def _ascent(risk, params, start, radius, steps, step_size, sign=1.0):
    """Projected normalised-gradient ascent (sign=+1) or descent (sign=-1) inside
    the ball of ``radius``; yields every visited value."""
    d = start.copy()
    yield _check_finite(risk(params + d))
    for _ in range(steps):
        g = sign * risk.grad(params + d)
        gn = np.linalg.norm(g)
        if not gn > 0:
            return
        d = d + step_size * g / gn
        dn = np.linalg.norm(d)
        if dn > radius:
            d *= radius / dn
        yield _check_finite(risk(params + d))


def eps_sharpness(risk: RiskSurface, params, cfg: FlatnessConfig, rho: float | None = None) -> float:
    """``100 * max_{||D|| <= rho} (risk(theta + D) - risk(theta)) / (1 + risk(theta))``.

    The maximum is approached by projected gradient ascent: the first restart
    starts at theta, the others at uniform points of the ball; step size rho/10.
    """
    params = np.asarray(params, dtype=np.float64)
    rho = cfg.rho_sharp if rho is None else rho
    if not rho > 0:
        raise ValueError("rho must be positive")
    base = _check_finite(risk(params))
    best = base
    for r in range(cfg.sharp_restarts):
        if r == 0:
            start = np.zeros_like(params)
        else:
            start = uniform_ball(child_rng(cfg.seed, 3, r), 1, params.size, rho)[0]
        for v in _ascent(risk, params, start, rho, cfg.sharp_steps, rho / 10.0):
            best = max(best, v)
    return max(0.0, 100.0 * (best - base) / (1.0 + base))


def b_flat_radius(risk: RiskSurface, params, cfg: FlatnessConfig) -> SearchResult:
    """Largest b such that no probe with ``||D|| <= b`` moves the risk by more than tol_b.

    Probes are ``mc_samples`` uniform points of the ball plus ``b_probes``
    gradient ascent and descent runs starting at half radius.
    """
    params = np.asarray(params, dtype=np.float64)
    base = _check_finite(risk(params))
    p = params.size
    rng = child_rng(cfg.seed, 4)
    dirs = unit_directions(rng, cfg.mc_samples, p)
    fracs = rng.uniform(size=cfg.mc_samples) ** (1.0 / p)
    probe_dirs = unit_directions(rng, cfg.b_probes, p)

    def feasible(b):
        for u, f in zip(dirs, fracs):
            if abs(_check_finite(risk(params + b * f * u)) - base) > cfg.tol_b:
                return False
        for u in probe_dirs:
            for sign in (1.0, -1.0):
                for v in _ascent(risk, params, 0.5 * b * u, b, cfg.sharp_steps, b / 10.0, sign):
                    if abs(v - base) > cfg.tol_b:
                        return False
        return True

    lo, hi, iters = cfg.b_search or cfg.search
    return _bisect(feasible, lo, hi, int(iters))


@dataclass(frozen=True)
class FlatnessReport:
    mu_pac_bayes: float
    lpf: float
    eps_sharp: float
    b_hat: float
    mc_stderr: dict
    sigma_star: float
    saturation: dict
    tol_b: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FlatnessReport":
        return cls(**d)


def flatness_report(model, params, dataset, cfg: FlatnessConfig, loss: str = "ce") -> FlatnessReport:
    """All four metrics on the empirical risk of ``dataset``."""
    risk = EmpiricalRisk(model, dataset.x, dataset.y, loss)
    pb = pac_bayes_mu(risk, params, cfg)
    lp = lpf(risk, params, cfg)
    sharp = eps_sharpness(risk, params, cfg)
    bf = b_flat_radius(risk, params, cfg)
    return FlatnessReport(
        mu_pac_bayes=pb.mu, lpf=lp.value, eps_sharp=sharp, b_hat=bf.value,
        mc_stderr={"lpf": lp.stderr}, sigma_star=pb.sigma_star,
        saturation={"pac_bayes": pb.saturated, "b_flat": bf.saturated},
        tol_b=cfg.tol_b)
