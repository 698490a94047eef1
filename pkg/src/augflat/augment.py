"""Label-preserving augmentations and their proximal density around the input.

An augmentation is described by an :class:`AugmentationConfig` (JSON friendly,
``kind`` discriminator). :func:`apply` is a pure function of
``(config, x, seed)``. :func:`distance_samples` draws ``||A(x_i) - x_i||_2``
with per-draw seeds, and :func:`psa_score` summarises the empirical CDF of
those distances at a few radii.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .data import Dataset, infer_image_shape

# "none" is for non-image features: no range check, no clipping
PIXEL_MAX = {"unit": 1.0, "byte": 255.0, "none": 1.0}
SPATIAL = {"translate", "rotate", "hflip", "chain_mix", "pattern_mix"}

# name -> default parameters; values in pixel units are in the declared scale
DEFAULTS: dict[str, dict[str, Any]] = {
    "identity": {},
    "gaussian_noise": {"sigma": 0.05},
    "uniform_noise": {"a": 0.05},
    "translate": {"max_px": 2},
    "rotate": {"max_deg": 15.0},
    "hflip": {"prob": 0.5},
    "contrast": {"range": (0.8, 1.2)},
    "brightness": {"range": (-0.1, 0.1)},
    "shift": {"offset": 0.5},
    "chain_mix": {"width": 3, "depth": 3, "alpha": 1.0, "beta": 1.0, "severity": 3,
                  "mix_weight": None},
    "pattern_mix": {"pattern_set": 0, "n_patterns": 16, "rounds": 4, "beta": 3.0,
                    "severity": 3},
    "sequence": {"ops": ()},
}


@dataclass(frozen=True)
class AugmentationConfig:
    """An augmentation operator and its parameters.

    ``sequence`` composes the operators in ``params["ops"]`` left to right.
    Randomness comes only from the seed handed to :func:`apply`.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    pixel_scale: str = "unit"

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.pixel_scale not in PIXEL_MAX:
            raise ValueError("pixel_scale must be 'unit', 'byte' or 'none'")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged = {**DEFAULTS[self.kind], **self.params}
        if self.kind == "sequence":
            ops = tuple(o if isinstance(o, AugmentationConfig)
                        else AugmentationConfig.from_dict({"pixel_scale": self.pixel_scale, **o})
                        for o in merged["ops"])
            if any(o.pixel_scale != self.pixel_scale for o in ops):
                raise ValueError("all operators in a sequence share one pixel scale")
            merged["ops"] = ops
        _validate(self.kind, merged)
        object.__setattr__(self, "params", merged)
        if self.pixel_scale == "none" and self.spatial:
            raise ValueError(f"{self.kind} needs image inputs, not pixel_scale='none'")

    @property
    def spatial(self) -> bool:
        """True when the operator needs the image layout of the input."""
        if self.kind == "sequence":
            return any(o.spatial for o in self.params["ops"])
        return self.kind in SPATIAL

    @property
    def aug_id(self) -> str:
        if self.kind == "sequence":
            return "+".join(o.aug_id for o in self.params["ops"]) or "identity"
        shown = {k: v for k, v in self.params.items() if v != DEFAULTS[self.kind][k]}
        if not shown:
            return self.kind
        return self.kind + "(" + ",".join(f"{k}={v}" for k, v in sorted(shown.items())) + ")"

    def to_dict(self) -> dict:
        params = dict(self.params)
        if self.kind == "sequence":
            params["ops"] = [o.to_dict() for o in params["ops"]]
        for k, v in params.items():
            if isinstance(v, tuple):
                params[k] = list(v)
        return {"kind": self.kind, "params": params, "pixel_scale": self.pixel_scale}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AugmentationConfig":
        d = dict(d)
        kind = d.pop("kind")
        scale = d.pop("pixel_scale", "unit")
        params = dict(d.pop("params", {}))
        params.update(d)  # flat form {"kind": ..., "sigma": ...} is accepted too
        for k, v in params.items():
            if isinstance(v, list) and k != "ops":
                params[k] = tuple(v)
        return cls(kind, params, scale)


def _validate(kind: str, p: dict) -> None:
    def positive(name, strict=False):
        v = p[name]
        if v is None or (v <= 0 if strict else v < 0):
            raise ValueError(f"{kind}: {name} must be {'> 0' if strict else '>= 0'}")

    if kind == "gaussian_noise":
        positive("sigma")
    elif kind == "uniform_noise":
        positive("a")
    elif kind == "translate":
        positive("max_px")
    elif kind == "rotate":
        positive("max_deg")
    elif kind == "hflip":
        if not 0 <= p["prob"] <= 1:
            raise ValueError("hflip: prob must be in [0, 1]")
    elif kind in ("contrast", "brightness"):
        lo, hi = p["range"]
        if lo > hi or (kind == "contrast" and lo < 0):
            raise ValueError(f"{kind}: invalid range {p['range']}")
    elif kind == "chain_mix":
        if int(p["width"]) < 1 or int(p["depth"]) < 1:
            raise ValueError("chain_mix: width and depth must be >= 1")
        positive("alpha", strict=True)
        positive("beta", strict=True)
        if not 1 <= p["severity"] <= 10:
            raise ValueError("chain_mix: severity must be in [1, 10]")
        if p["mix_weight"] is not None and not 0 <= p["mix_weight"] <= 1:
            raise ValueError("chain_mix: mix_weight must be in [0, 1]")
    elif kind == "pattern_mix":
        if int(p["rounds"]) < 0 or int(p["n_patterns"]) < 1:
            raise ValueError("pattern_mix: rounds >= 0 and n_patterns >= 1 required")
        positive("beta", strict=True)


# --- geometric primitives on (C, H, W) images in [0, 1] -----------------------

def _rotate(img, deg):
    return ndimage.rotate(img, deg, axes=(2, 1), reshape=False, order=1, mode="nearest")


def _translate(img, dy, dx):
    return ndimage.shift(img, (0, dy, dx), order=1, mode="nearest")


def _shear(img, s, axis):
    c, h, w = img.shape
    m = np.eye(3)
    centre = np.array([0, (h - 1) / 2, (w - 1) / 2])
    if axis == "x":
        m[2, 1] = s
    else:
        m[1, 2] = s
    offset = centre - m @ centre
    return ndimage.affine_transform(img, m, offset=offset, order=1, mode="nearest")


def _level(rng, severity):
    return rng.uniform(0.1, severity) / 10.0


def _random_sign(rng, v):
    return -v if rng.uniform() < 0.5 else v


def _geometric_op(img, rng, severity):
    """One AugMix-style geometric op at a random magnitude up to ``severity``."""
    _, h, w = img.shape
    op = rng.integers(5)
    lvl = _level(rng, severity)
    if op == 0:
        return _rotate(img, _random_sign(rng, 30.0 * lvl))
    if op == 1:
        return _shear(img, _random_sign(rng, 0.3 * lvl), "x")
    if op == 2:
        return _shear(img, _random_sign(rng, 0.3 * lvl), "y")
    if op == 3:
        return _translate(img, 0.0, _random_sign(rng, w / 3.0 * lvl))
    return _translate(img, _random_sign(rng, h / 3.0 * lvl), 0.0)


# --- chain mix (AugMix-lite) -------------------------------------------------

@dataclass(frozen=True)
class ChainMixParts:
    original: np.ndarray
    chains: np.ndarray
    weights: np.ndarray
    mix: float

    def combine(self) -> np.ndarray:
        mixed = np.tensordot(self.weights, self.chains, axes=1)
        return (1.0 - self.mix) * self.original + self.mix * mixed


def chain_mix_parts(params: Mapping[str, Any], img: np.ndarray, rng) -> ChainMixParts:
    width, depth = int(params["width"]), int(params["depth"])
    weights = rng.dirichlet([params["alpha"]] * width)
    m = params["mix_weight"]
    m = float(rng.beta(params["beta"], params["beta"])) if m is None else float(m)
    chains = []
    for _ in range(width):
        a = img.copy()
        for _ in range(rng.integers(1, depth + 1)):
            a = np.clip(_geometric_op(a, rng, params["severity"]), 0.0, 1.0)
        chains.append(a)
    return ChainMixParts(img, np.stack(chains), weights, m)


# --- pattern mix (PixMix-lite) -----------------------------------------------

def plasma_fractal(size: int, rng, decay: float = 3.0) -> np.ndarray:
    """Diamond-square plasma pattern, ``size x size`` with values in [0, 1]."""
    n = 1
    while n < max(size, 2):
        n *= 2
    a = np.zeros((n, n))
    step, wibble = n, 100.0

    def jitter(v):
        return v / 4.0 + wibble * rng.uniform(-wibble, wibble, v.shape)

    while step >= 2:
        half = step // 2
        corners = a[0:n:step, 0:n:step]
        sq = corners + np.roll(corners, -1, axis=0)
        sq = sq + np.roll(sq, -1, axis=1)
        a[half:n:step, half:n:step] = jitter(sq)
        centres = a[half:n:step, half:n:step]
        corners = a[0:n:step, 0:n:step]
        a[0:n:step, half:n:step] = jitter(centres + np.roll(centres, 1, axis=0)
                                          + corners + np.roll(corners, -1, axis=1))
        a[half:n:step, 0:n:step] = jitter(centres + np.roll(centres, 1, axis=1)
                                          + corners + np.roll(corners, -1, axis=0))
        step //= 2
        wibble /= decay
    a = a[:size, :size]
    a = a - a.min()
    top = a.max()
    return a / top if top > 0 else a


@functools.lru_cache(maxsize=32)
def pattern_bank(pattern_set: int, n_patterns: int, shape: tuple[int, int, int]) -> np.ndarray:
    """A fixed, reproducible set of plasma patterns identified by ``pattern_set``."""
    c, h, w = shape
    rng = np.random.default_rng(np.random.SeedSequence([0x9A77, int(pattern_set)]))
    bank = np.empty((n_patterns, c, h, w))
    for i in range(n_patterns):
        for ch in range(c):
            bank[i, ch] = plasma_fractal(max(h, w), rng)[:h, :w]
    bank.setflags(write=False)
    return bank


def _mix_coefficients(rng, beta):
    if rng.uniform() < 0.5:
        return rng.beta(beta, 1.0), rng.beta(1.0, beta)
    return 1.0 + rng.beta(1.0, beta), -rng.beta(1.0, beta)


def _mix_add(a, b, rng, beta):
    wa, wb = _mix_coefficients(rng, beta)
    out = wa * (2 * a - 1) + wb * (2 * b - 1)
    return (out + 1) / 2


def _mix_multiply(a, b, rng, beta):
    wa, wb = _mix_coefficients(rng, beta)
    out = (2 * a) ** wa * np.clip(2 * b, 1e-37, None) ** wb
    return out / 2


def _pattern_mix(params, img, rng):
    bank = pattern_bank(int(params["pattern_set"]), int(params["n_patterns"]), img.shape)
    sev = params["severity"]
    mixed = _geometric_op(img, rng, sev) if rng.uniform() < 0.5 else img.copy()
    for _ in range(rng.integers(int(params["rounds"]) + 1)):
        if rng.uniform() < 0.5:
            other = _geometric_op(img, rng, sev)
        else:
            other = bank[rng.integers(len(bank))]
        op = _mix_add if rng.uniform() < 0.5 else _mix_multiply
        mixed = np.clip(op(mixed, other, rng, params["beta"]), 0.0, 1.0)
    return mixed


# --- dispatcher --------------------------------------------------------------

def _apply_unit(cfg: AugmentationConfig, img: np.ndarray, rng, hi: float,
                bounded: bool = True) -> np.ndarray:
    p = cfg.params
    k = cfg.kind
    if k == "identity":
        return img
    if k == "gaussian_noise":
        return img + rng.normal(0.0, p["sigma"] / hi, img.shape) if p["sigma"] > 0 else img
    if k == "uniform_noise":
        return img + rng.uniform(-p["a"] / hi, p["a"] / hi, img.shape)
    if k == "translate":
        m = int(p["max_px"])
        dy, dx = rng.integers(-m, m + 1, size=2)
        return _translate(img, float(dy), float(dx)) if (dy or dx) else img
    if k == "rotate":
        return _rotate(img, rng.uniform(-p["max_deg"], p["max_deg"]))
    if k == "hflip":
        return img[:, :, ::-1].copy() if rng.uniform() < p["prob"] else img
    if k == "contrast":
        f = rng.uniform(*p["range"])
        mean = img.mean()
        return (img - mean) * f + mean
    if k == "brightness":
        return img + rng.uniform(*p["range"]) / hi
    if k == "shift":
        return img + p["offset"] / hi
    if k == "chain_mix":
        return chain_mix_parts(p, img, rng).combine()
    if k == "pattern_mix":
        return _pattern_mix(p, img, rng)
    if k == "sequence":
        for op in p["ops"]:
            img = _apply_unit(op, img, rng, hi, bounded)
            if bounded:
                img = np.clip(img, 0.0, 1.0)
        return img
    raise AssertionError(k)


def apply(cfg: AugmentationConfig, x, seed, image_shape: Sequence[int] | None = None) -> np.ndarray:
    """Augment one flat input; output has the same shape and stays in pixel range.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``. The image
    layout is only needed by spatial operators; it defaults to a square
    single-channel guess.
    """
    hi = PIXEL_MAX[cfg.pixel_scale]
    bounded = cfg.pixel_scale != "none"
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("apply expects a single flattened input")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    if bounded and (np.any(x < -1e-9) or np.any(x > hi + 1e-9)):
        raise ValueError(f"input outside the {cfg.pixel_scale} pixel range")
    if image_shape is not None:
        shape = tuple(image_shape)
    elif cfg.spatial:
        shape = infer_image_shape(x.size)
    else:
        shape = (1, 1, x.size)
    if int(np.prod(shape)) != x.size:
        raise ValueError("image_shape does not match the input")
    rng = np.random.default_rng(seed)
    img = x.reshape(shape) / hi
    out = _apply_unit(cfg, img, rng, hi, bounded)
    if bounded:
        out = np.clip(out, 0.0, 1.0)
    return (out * hi).reshape(x.shape)


def _layout(dataset: Dataset):
    try:
        return dataset.resolved_image_shape()
    except ValueError:
        return None


def augment_dataset(cfg: AugmentationConfig, dataset: Dataset, seed: int,
                    epoch: int = 0) -> Dataset:
    """One augmented copy of every sample; sample i uses seed (seed, epoch, i)."""
    shape = _layout(dataset)
    out = np.empty_like(dataset.x)
    for i, x in enumerate(dataset.x):
        out[i] = apply(cfg, x, np.random.SeedSequence([seed, epoch, i]), shape)
    return dataset.with_inputs(out)


# --- distances and eCDF ------------------------------------------------------

@dataclass(frozen=True)
class DistanceSampleSet:
    distances: np.ndarray
    aug_id: str
    dataset_id: str
    pixel_scale: str = "unit"
    _sorted: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = np.array(self.distances, dtype=np.float64).ravel()
        if d.size < 1:
            raise ValueError("need at least one distance")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite and nonnegative")
        d.setflags(write=False)
        s = np.sort(d)
        s.setflags(write=False)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "_sorted", s)

    def __len__(self) -> int:
        return self.distances.size


def distance_samples(cfg: AugmentationConfig, dataset: Dataset, n: int, seed: int) -> DistanceSampleSet:
    """``n`` distances ``||A(x_i) - x_i||``; draw i uses sample ``i mod len(dataset)``
    and seed ``(seed, i)``, i.e. one draw per image per pass."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = _layout(dataset)
    d = np.empty(n)
    for i in range(n):
        x = dataset.x[i % len(dataset)]
        xa = apply(cfg, x, np.random.SeedSequence([seed, i]), shape)
        d[i] = np.linalg.norm(xa - x)
    return DistanceSampleSet(d, cfg.aug_id, dataset.name, cfg.pixel_scale)


def ecdf(d: DistanceSampleSet, gamma):
    """Fraction of distances ``<= gamma``; scalar or array ``gamma``."""
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("gamma must be >= 0")
    frac = np.searchsorted(d._sorted, g, side="right") / len(d)
    return float(frac) if frac.ndim == 0 else frac


@dataclass(frozen=True)
class PsaReport:
    ecdf_at: dict[float, float]
    gamma_A_hat: float
    compliant: bool
    designated: float
    quantile: float
    n: int


def psa_report(d: DistanceSampleSet, thresholds: Sequence[float], designated: float | None = None,
               q: float = 0.01, cutoff: float = 0.01) -> PsaReport:
    th = [float(t) for t in thresholds]
    if not th:
        raise ValueError("need at least one threshold")
    if any(b < a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be sorted ascending")
    star = th[-1] if designated is None else float(designated)
    values = ecdf(d, th)
    at = {t: float(v) for t, v in zip(th, values)}
    gamma_hat = float(np.quantile(d.distances, q, method="inverted_cdf"))
    return PsaReport(at, gamma_hat, ecdf(d, star) >= cutoff, star, q, len(d))


def psa_score(cfg: AugmentationConfig, dataset: Dataset, thresholds: Sequence[float], n: int,
              seed: int, designated: float | None = None, q: float = 0.01) -> PsaReport:
    """eCDF at each threshold, a low-quantile estimate of the support radius, and
    whether at least 1% of draws land within ``designated`` (default: the largest
    threshold)."""
    th = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be sorted ascending")
    return psa_report(distance_samples(cfg, dataset, n, seed), th, designated, q)
