"""Datasets and desk-scale synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Rows of ``x`` are inputs, ``y`` holds integer class labels.

    ``image_shape`` is ``(C, H, W)`` when the rows are flattened images;
    geometric augmentations and corruptions need it.
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = "dataset"
    image_shape: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if x.ndim != 2 or len(x) == 0:
            raise ValueError("dataset must be a nonempty (N, n) array")
        if y.shape != (len(x),):
            raise ValueError("one label per sample required")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite inputs")
        if self.n_classes < 1 or np.any(y < 0) or np.any(y >= self.n_classes):
            raise ValueError("labels out of range")
        if self.image_shape is not None:
            shape = tuple(int(s) for s in self.image_shape)
            if int(np.prod(shape)) != x.shape[1]:
                raise ValueError("image_shape does not match the input dimension")
            object.__setattr__(self, "image_shape", shape)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.n_classes,
                       name or self.name, self.image_shape)

    def with_inputs(self, x, name: str | None = None) -> "Dataset":
        return Dataset(x, self.y, self.n_classes, name or self.name, self.image_shape)

    def resolved_image_shape(self) -> tuple[int, int, int]:
        """``image_shape``, or a square single-channel guess."""
        if self.image_shape is not None:
            return self.image_shape
        return infer_image_shape(self.n_features)


def infer_image_shape(n: int) -> tuple[int, int, int]:
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ValueError(f"cannot infer an image shape for {n} features")
    return (1, side, side)


SYNTHETIC_KINDS = ("gaussian_blobs", "two_moons", "mini_images")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator description.

    kind is one of ``gaussian_blobs`` (uses k, dim, sep), ``two_moons`` (uses
    noise) or ``mini_images`` (uses size, k as the class count, noise as the
    background noise level).
    """

    kind: str
    n: int = 2000
    k: int = 2
    dim: int = 2
    sep: float = 10.0
    noise: float = 0.0
    size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic dataset {self.kind!r}")
        if self.n < 5 or self.k < 1 or self.dim < 1 or self.size < 3:
            raise ValueError("invalid synthetic dataset sizes")
        if self.noise < 0 or self.sep < 0:
            raise ValueError("noise and sep must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "k": self.k, "dim": self.dim,
                "sep": self.sep, "noise": self.noise, "size": self.size, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def _split(x, y, c, name, rng, image_shape=None):
    perm = rng.permutation(len(x))
    cut = int(round(0.8 * len(x)))
    tr, te = perm[:cut], perm[cut:]
    return (Dataset(x[tr], y[tr], c, f"{name}-train", image_shape),
            Dataset(x[te], y[te], c, f"{name}-test", image_shape))


def gaussian_blobs(n: int, k: int, dim: int, sep: float, rng) -> tuple[np.ndarray, np.ndarray]:
    # unit-variance blobs whose centres are sep apart along distinct directions
    if k < 2 or dim < 1:
        raise ValueError("gaussian_blobs needs k >= 2 and dim >= 1")
    centres = np.zeros((k, dim))
    if k == 2:
        centres[1, 0] = sep
    else:
        angles = 2 * np.pi * np.arange(k) / k
        radius = sep / (2 * np.sin(np.pi / k))
        centres[:, 0] = radius * np.cos(angles)
        centres[:, min(1, dim - 1)] += radius * np.sin(angles)
    y = np.arange(n) % k
    x = centres[y] + rng.normal(size=(n, dim))
    return x, y


def two_moons(n: int, noise: float, rng) -> tuple[np.ndarray, np.ndarray]:
    y = np.arange(n) % 2
    t = rng.uniform(0, np.pi, size=n)
    x = np.where(y[:, None] == 0,
                 np.stack([np.cos(t), np.sin(t)], axis=1),
                 np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1))
    if noise > 0:
        x = x + rng.normal(0, noise, size=x.shape)
    return x, y


def _shape_mask(cls: int, size: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
    r = rng.uniform(size * 0.2, size * 0.32)
    kind = cls % 6
    if kind == 0:  # filled square
        m = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    elif kind == 1:  # ring
        d = np.hypot(yy - cy, xx - cx)
        m = (d <= r + 0.6) & (d >= r - 0.6)
    elif kind == 2:  # horizontal bar
        m = (np.abs(yy - cy) <= 0.8) & (np.abs(xx - cx) <= r + 1)
    elif kind == 3:  # vertical bar
        m = (np.abs(xx - cx) <= 0.8) & (np.abs(yy - cy) <= r + 1)
    elif kind == 4:  # diagonal
        m = np.abs((yy - cy) - (xx - cx)) <= 0.8
        m &= np.abs(yy - cy) <= r + 1
    else:  # cross
        m = ((np.abs(xx - cx) <= 0.6) | (np.abs(yy - cy) <= 0.6)) & \
            (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    return m.astype(np.float64)


def mini_images(n: int, k: int, size: int, noise: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Procedural ``size x size`` grey images of k shape classes in [0, 1]."""
    if not 2 <= k <= 6:
        raise ValueError("mini_images supports 2..6 classes")
    y = np.arange(n) % k
    x = np.empty((n, size * size))
    for i in range(n):
        m = _shape_mask(int(y[i]), size, rng)
        fg = rng.uniform(0.6, 1.0)
        bg = rng.uniform(0.0, 0.25)
        img = bg + (fg - bg) * m
        if noise > 0:
            img = img + rng.normal(0, noise, size=img.shape)
        x[i] = np.clip(img, 0.0, 1.0).ravel()
    return x, y


def make_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Generate a dataset deterministically from ``spec.seed``; returns (train, test)."""
    if spec.n < 5:
        raise ValueError("need at least 5 samples for an 80/20 split")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_blobs":
        x, y = gaussian_blobs(spec.n, spec.k, spec.dim, spec.sep, rng)
        return _split(x, y, spec.k, spec.kind, rng)
    if spec.kind == "two_moons":
        x, y = two_moons(spec.n, spec.noise, rng)
        return _split(x, y, 2, spec.kind, rng)
    if spec.kind == "mini_images":
        x, y = mini_images(spec.n, spec.k, spec.size, spec.noise, rng)
        return _split(x, y, spec.k, spec.kind, rng, (1, spec.size, spec.size))
    raise ValueError(f"unknown synthetic dataset {spec.kind!r}")
