"""Seeded noise models."""
from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Generator from an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed: int, n: int) -> list:
    """Independent child seed sequences, deterministic in ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)


def make_noise(y_true, level: float, seed=0, mode: str = "gaussian", scale: float = 1.0) -> np.ndarray:
    """Perturb exact data.

    ``gaussian``: ``y + level ||y||_2 xi/||xi||_2`` with standard normal ``xi``, so
    the relative error is exactly ``level``. ``poisson``: ``Poisson(scale y)/scale``.
    """
    y_true = np.asarray(y_true, dtype=float)
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    rng = make_rng(seed)
    if mode == "gaussian":
        if level == 0:
            return y_true.copy()
        xi = rng.standard_normal(y_true.shape)
        return y_true + level * np.linalg.norm(y_true) * xi / np.linalg.norm(xi)
    if mode == "poisson":
        if np.any(y_true < 0):
            raise ValueError("Poisson mode needs nonnegative intensities")
        if not scale > 0:
            raise ValueError("photon scale must be positive")
        return rng.poisson(scale * y_true).astype(float) / scale
    raise ValueError(f"unknown noise mode {mode!r}")
