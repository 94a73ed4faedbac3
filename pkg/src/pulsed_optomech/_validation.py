"""Input checks shared by the estimators and the functional API."""
from __future__ import annotations

import math

import numpy as np

from .errors import GridError


def check_uniform_grid(grid, name: str = "grid", min_points: int = 3) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < min_points:
        raise GridError(f"{name} must be a 1-d array with at least {min_points} points")
    d = np.diff(g)
    if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-6, atol=0):
        raise GridError(f"{name} must be uniform and increasing")
    return g


def check_angles(angles, min_count: int = 1, half_period: bool = False) -> np.ndarray:
    a = np.atleast_1d(np.asarray(angles, dtype=float))
    if a.size < min_count:
        raise ValueError(f"need at least {min_count} angles, got {a.size}")
    if half_period:
        if np.any(a < 0) or np.any(a >= math.pi + 1e-12):
            raise ValueError("angles must lie in [0, pi)")
    return a


def check_densities(values, n_points: int | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise ValueError("densities must be a 1-d or 2-d array")
    if n_points is not None and v.shape[1] != n_points:
        raise ValueError(f"expected {n_points} samples per row, got {v.shape[1]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("densities contain non-finite values")
    return v


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_generators(master_seed, n: int):
    """Independent child generators derived from one master seed."""
    if isinstance(master_seed, np.random.SeedSequence):
        ss = master_seed
    else:
        ss = np.random.SeedSequence(master_seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]
