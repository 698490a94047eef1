from __future__ import annotations

import numpy as np


def child_rng(base_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for task ``keys`` under ``base_seed``.

    Results never depend on the order tasks run in.
    """
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *map(int, keys)]))


def uniform_ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """``count`` points uniform in the closed L2 ball of ``radius`` in R^dim."""
    z = rng.normal(size=(count, dim))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / dim)
    return z / norms * r


def unit_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    z = rng.normal(size=(count, dim))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return z / norms
