"""PGD attacks, synthetic common corruptions and the error summaries built on them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from ._rng import uniform_ball
from .data import Dataset, infer_image_shape
from .nnet import forward, grad_inputs, per_sample_loss

# Per-severity constants (severity 1..5), in unit pixel scale.
#   gaussian_noise: noise std         shot_noise: photon count scale (fewer = worse)
#   impulse_noise: replaced fraction  gaussian_blur: kernel std in pixels
#   contrast: scale about the mean    brightness: added HSV value
#   pixelate: block edge in pixels
SEVERITY_TABLE: dict[str, tuple] = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),
    "shot_noise": (500, 250, 100, 75, 50),
    "impulse_noise": (0.01, 0.02, 0.03, 0.05, 0.07),
    "gaussian_blur": (0.4, 0.6, 0.7, 0.8, 1.0),
    "contrast": (0.75, 0.5, 0.4, 0.3, 0.15),
    "brightness": (0.05, 0.1, 0.15, 0.2, 0.3),
    "pixelate": (2, 2, 3, 3, 4),
}
CORRUPTIONS = tuple(SEVERITY_TABLE)


@dataclass(frozen=True)
class AttackConfig:
    norm: str
    eps: float
    alpha: float
    steps: int
    random_start: Optional[bool] = None  # None: True for linf, False for l2

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValueError("norm must be 'l2' or 'linf'")
        if not (self.eps > 0 and self.alpha > 0) or self.steps < 0:
            raise ValueError("need eps > 0, alpha > 0, steps >= 0")
        if self.random_start is None:
            object.__setattr__(self, "random_start", self.norm == "linf")

    @property
    def name(self) -> str:
        return f"{self.norm}-eps{self.eps:g}-a{self.alpha:g}-s{self.steps}"


ATTACK_PRESETS = {
    "cifar-l2": AttackConfig("l2", 0.5, 0.0125, 20),
    "cifar-linf": AttackConfig("linf", 8 / 255, 2 / 255, 7),
    "tinyimagenet-l2": AttackConfig("l2", 0.25, 0.025, 10),
    "tinyimagenet-linf": AttackConfig("linf", 8 / 255, 2 / 255, 5),
    "imagenet-l2": AttackConfig("l2", 0.25, 0.025, 10),
    "imagenet-linf": AttackConfig("linf", 2 / 255, 1 / 255, 2),
}


def _project(delta: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        return np.clip(delta, -cfg.eps, cfg.eps)
    n = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.minimum(1.0, cfg.eps / np.maximum(n, 1e-300))
    return delta * scale


def pgd_attack(model, params, x, y, cfg: AttackConfig, seed: int = 0, loss: str = "ce",
               bounds: tuple[float, float] | None = (0.0, 1.0)) -> np.ndarray:
    """Untargeted PGD inside the eps-ball and the pixel box.

    L-inf steps move by ``alpha * sign(grad)``; L2 steps by ``alpha`` along the
    normalised gradient (a zero gradient is a no-op). For each sample the
    highest-loss iterate seen, the clean input included, is returned.
    ``bounds=None`` drops the box for non-image features.
    """
    lo, hi = bounds if bounds is not None else (-np.inf, np.inf)
    x0 = np.asarray(x, dtype=np.float64)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    y = np.atleast_1d(np.asarray(y))
    if np.any(x0 < lo - 1e-12) or np.any(x0 > hi + 1e-12):
        raise ValueError("inputs must lie in the pixel range")
    best = x0.copy()
    best_loss = per_sample_loss(forward(model, params, x0), y, loss)
    adv = x0.copy()
    if cfg.random_start and cfg.steps > 0:
        rng = np.random.default_rng(seed)
        if cfg.norm == "linf":
            start = rng.uniform(-cfg.eps, cfg.eps, size=x0.shape)
        else:
            start = uniform_ball(rng, len(x0), x0.shape[1], cfg.eps)
        adv = np.clip(x0 + start, lo, hi)
    for _ in range(cfg.steps):
        g = grad_inputs(model, params, adv, y, loss)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite input gradient")
        if cfg.norm == "linf":
            step = cfg.alpha * np.sign(g)
        else:
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            step = np.where(gn > 0, cfg.alpha * g / np.where(gn > 0, gn, 1.0), 0.0)
        adv = np.clip(x0 + _project(adv + step - x0, cfg), lo, hi)
        cur = per_sample_loss(forward(model, params, adv), y, loss)
        better = cur > best_loss
        best[better] = adv[better]
        best_loss = np.where(better, cur, best_loss)
    return best[0] if single else best


def error_rate(model, params, x, y) -> float:
    """Misclassification percentage of argmax predictions."""
    pred = np.argmax(forward(model, params, np.atleast_2d(x)), axis=1)
    return float(100.0 * np.mean(pred != np.asarray(y)))


def adversarial_error(model, params, dataset: Dataset, cfg: AttackConfig, seed: int = 0,
                      loss: str = "ce", bounds: tuple[float, float] | None = (0.0, 1.0)) -> float:
    """Error (%) on PGD examples crafted against every sample of ``dataset``."""
    adv = pgd_attack(model, params, dataset.x, dataset.y, cfg, seed, loss, bounds)
    return error_rate(model, params, adv, dataset.y)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLE:
            raise ValueError(f"unknown corruption {self.kind!r}")
        if self.severity not in (1, 2, 3, 4, 5):
            raise ValueError("severity must be in 1..5")

    @property
    def parameter(self):
        return SEVERITY_TABLE[self.kind][self.severity - 1]


def _pixelate(img: np.ndarray, block: int) -> np.ndarray:
    c, h, w = img.shape
    out = np.empty_like(img)
    for i in range(0, h, block):
        for j in range(0, w, block):
            tile = img[:, i:i + block, j:j + block]
            out[:, i:i + block, j:j + block] = tile.mean(axis=(1, 2), keepdims=True)
    return out


def _brightness(img: np.ndarray, c: float) -> np.ndarray:
    # add c to the HSV value channel, keeping hue and saturation
    if img.shape[0] == 1:
        return img + c
    v = img.max(axis=0, keepdims=True)
    v_new = np.clip(v + c, 0.0, 1.0)
    return np.where(v > 0, img * v_new / np.where(v > 0, v, 1.0), v_new)


def corrupt(x, spec: CorruptionSpec, seed, image_shape: Sequence[int] | None = None) -> np.ndarray:
    """Apply one corruption at one severity to a flat unit-range input."""
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(image_shape) if image_shape is not None else infer_image_shape(x.size)
    img = x.reshape(shape)
    rng = np.random.default_rng(seed)
    c = spec.parameter
    k = spec.kind
    if k == "gaussian_noise":
        out = img + rng.normal(0.0, c, img.shape)
    elif k == "shot_noise":
        out = rng.poisson(np.clip(img, 0, 1) * c) / c
    elif k == "impulse_noise":
        hit = rng.uniform(size=img.shape) < c
        salt = rng.uniform(size=img.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), img)
    elif k == "gaussian_blur":
        out = ndimage.gaussian_filter(img, sigma=(0, c, c), mode="nearest")
    elif k == "contrast":
        m = img.mean()
        out = (img - m) * c + m
    elif k == "brightness":
        out = _brightness(img, c)
    else:
        out = _pixelate(img, int(c))
    return np.clip(out, 0.0, 1.0).reshape(x.shape)


def corrupt_dataset(dataset: Dataset, spec: CorruptionSpec, seed: int) -> Dataset:
    shape = dataset.resolved_image_shape()
    kind_id = CORRUPTIONS.index(spec.kind)
    out = np.empty_like(dataset.x)
    for i, x in enumerate(dataset.x):
        out[i] = corrupt(x, spec, np.random.SeedSequence([seed, kind_id, spec.severity, i]), shape)
    return dataset.with_inputs(out, f"{dataset.name}-{spec.kind}-{spec.severity}")


@dataclass(frozen=True)
class RobustnessReport:
    clean_error: Optional[float]
    adv_error: dict = field(default_factory=dict)
    mce: Optional[float] = None
    grid: dict = field(default_factory=dict)  # kind -> {severity: error %}

    @staticmethod
    def grid_mean(grid: Mapping[str, Mapping[int, float]]) -> float:
        cells = [float(v) for row in grid.values() for v in row.values()]
        if not cells:
            raise ValueError("empty corruption grid")
        return float(np.mean(cells))

    @classmethod
    def from_grid(cls, grid, clean_error=None, adv_error=None) -> "RobustnessReport":
        grid = {k: {int(s): float(v) for s, v in row.items()} for k, row in grid.items()}
        return cls(clean_error, dict(adv_error or {}), cls.grid_mean(grid), grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {k: {str(s): v for s, v in row.items()} for k, row in self.grid.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessReport":
        grid = {k: {int(s): v for s, v in row.items()} for k, row in d.get("grid", {}).items()}
        return cls(d.get("clean_error"), dict(d.get("adv_error", {})), d.get("mce"), grid)


def mce(model, params, clean_test: Dataset, kinds: Sequence[str] = CORRUPTIONS,
        severities: Sequence[int] = (1, 2, 3, 4, 5), seed: int = 0) -> RobustnessReport:
    """Unnormalised mean corruption error over a kinds x severities grid."""
    if not kinds or not severities:
        raise ValueError("empty corruption grid")
    grid = {}
    for k in kinds:
        grid[k] = {}
        for s in severities:
            cd = corrupt_dataset(clean_test, CorruptionSpec(k, int(s)), seed)
            grid[k][int(s)] = error_rate(model, params, cd.x, cd.y)
    clean = error_rate(model, params, clean_test.x, clean_test.y)
    return RobustnessReport.from_grid(grid, clean)


def robustness_report(model, params, clean_test: Dataset, attacks: Mapping[str, AttackConfig],
                      kinds: Sequence[str] = CORRUPTIONS, severities: Sequence[int] = (1, 2, 3, 4, 5),
                      seed: int = 0, bounds: tuple[float, float] | None = (0.0, 1.0)) -> RobustnessReport:
    """Clean error, one adversarial error per attack and the corruption grid.

    An empty ``kinds`` skips the corruptions (``mce`` is then None).
    """
    adv = {name: adversarial_error(model, params, clean_test, cfg, seed, bounds=bounds)
           for name, cfg in attacks.items()}
    if not kinds:
        clean = error_rate(model, params, clean_test.x, clean_test.y)
        return RobustnessReport(clean, adv)
    rep = mce(model, params, clean_test, kinds, severities, seed)
    return RobustnessReport(rep.clean_error, adv, rep.mce, rep.grid)
