"""Sparsity of perturbation magnitudes: Gini index, Hoyer measure, l0 pixel fraction."""

from __future__ import annotations

import numpy as np

from .errors import UndefinedSparsityError


def _coefficients(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size == 0:
        raise UndefinedSparsityError("empty coefficient vector")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("coefficients must be finite and non-negative")
    if not np.any(c > 0):
        raise UndefinedSparsityError("all-zero coefficient vector")
    return c


def gini(c) -> float:
    """Gini index of non-negative coefficients; 0 for uniform, 1 - 1/N for one-hot."""
    c = np.sort(_coefficients(c))
    N = c.size
    k = np.arange(1, N + 1)
    # dividing by max first keeps the sum exact under scaling by powers of two
    c = c / c.max()
    value = 1.0 - 2.0 * np.sum((c / c.sum()) * ((N - k + 0.5) / N))
    return float(np.clip(value, 0.0, 1.0))


def hoyer(c) -> float:
    """Normalized l1/l2 ratio: 0 iff all entries equal, 1 iff exactly one is non-zero."""
    c = _coefficients(c)
    N = c.size
    if N < 2:
        raise UndefinedSparsityError("Hoyer measure needs N >= 2")
    c = c / c.max()
    sqrt_n = np.sqrt(N)
    ratio = c.sum() / np.sqrt(np.sum(c * c))
    value = (sqrt_n - ratio) / (sqrt_n - 1.0)
    return float(np.clip(value, 0.0, 1.0))


def l0_fraction(delta, pixel_threshold: float = 0.0) -> float:
    """Share of pixels whose largest channel change exceeds ``pixel_threshold``.

    ``delta`` is H x W x C (or H x W for a single channel).
    """
    d = np.abs(np.asarray(delta, dtype=np.float64))
    if d.ndim == 2:
        d = d[:, :, None]
    if d.ndim != 3:
        raise ValueError(f"expected an H x W x C perturbation, got shape {d.shape}")
    if pixel_threshold < 0:
        raise ValueError("pixel_threshold must be >= 0")
    touched = d.max(axis=2) > pixel_threshold
    return float(touched.mean())


def gini_batch(deltas) -> np.ndarray:
    """Gini of |delta| for each row of a (B, ...) stack; NaN marks all-zero rows."""
    a = np.abs(np.asarray(deltas, dtype=np.float64)).reshape(len(deltas), -1)
    N = a.shape[1]
    s = np.sort(a, axis=1)
    total = s.sum(axis=1)
    weights = (N - np.arange(1, N + 1) + 0.5) / N
    with np.errstate(invalid="ignore", divide="ignore"):
        value = 1.0 - 2.0 * (s @ weights) / total
    return np.where(total > 0, np.clip(value, 0.0, 1.0), np.nan)


def hoyer_batch(deltas) -> np.ndarray:
    a = np.abs(np.asarray(deltas, dtype=np.float64)).reshape(len(deltas), -1)
    N = a.shape[1]
    sqrt_n = np.sqrt(N)
    l1 = a.sum(axis=1)
    l2 = np.sqrt(np.sum(a * a, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        value = (sqrt_n - l1 / l2) / (sqrt_n - 1.0)
    return np.where(l1 > 0, np.clip(value, 0.0, 1.0), np.nan)


def l0_fraction_batch(deltas, pixel_threshold: float = 0.0) -> np.ndarray:
    d = np.abs(np.asarray(deltas, dtype=np.float64))
    return (d.max(axis=3) > pixel_threshold).mean(axis=(1, 2))
