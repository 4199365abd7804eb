"""Dense linear algebra helpers, seeded random streams and summary statistics.

Matrices are plain 2-D ``float64`` numpy arrays in C order. Random streams are
numpy ``Generator`` objects over the counter-based Philox bit generator, keyed
by a seed and a tuple of stream indices, so the same key yields the same draws
on every platform and child streams never overlap.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes are not conformable."""


class ConstantColumnError(ValueError):
    """Raised when a column cannot be standardized because it has no spread."""


class DegenerateRangeError(ValueError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def standardize(column) -> tuple[np.ndarray, float, float]:
    """Scale a column to sample mean 0 and sample std 1 (ddof=1).

    Returns the scaled column plus the fitted ``(mean, std)`` so the same
    transform can be applied to held-out data.
    """
    x = np.asarray(column, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot standardize an empty column")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    if not std > 0.0:
        raise ConstantColumnError("column has zero variance")
    return (x - mean) / std, mean, std


def minmax(column, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise DegenerateRangeError(f"min-max range is degenerate: lo={lo}, hi={hi}")
    x = np.asarray(column, dtype=np.float64)
    return (x - lo) / (hi - lo)


def mean_std(values) -> tuple[float, float]:
    """Sample mean and sample standard deviation (ddof=1)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError(f"standard deviation needs at least 2 values, got {x.size}")
    return float(x.mean()), float(x.std(ddof=1))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for ``(seed, *stream)``.

    Distinct stream tuples give statistically independent generators, so
    parallel tasks can each derive their own up front.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """A 63-bit integer seed derived from ``(seed, *stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
