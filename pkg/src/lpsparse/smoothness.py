"""Smoothness scores for images and perturbations.

Two families:

* operator smoothness ``-sum_i exp(-alpha_i) * d(alpha_i)``, where ``d`` is the
  mean absolute change of the input under a smoothing operator of strength
  ``alpha_i`` (Gaussian blur or radial low-pass);
* Taylor smoothness ``-||I_approx - I||_2`` over interior pixels and all
  channels, where ``I_approx`` averages the first-order expansions taken at
  each neighbour of a pixel.

Single images are H x W x C; the ``*_batch`` variants take (B, H, W, C).
Operators act on each channel separately. All scores are <= 0 and equal 0 on
constant inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AlphaSchedule:
    alphas: tuple[float, ...]
    params: tuple[float, ...]  # sigma (Gaussian) or radial cutoff (low-pass) per alpha

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.size == 0 or np.any(a <= 0) or np.any(np.diff(a) <= 0):
            raise ValueError("alphas must be positive and strictly increasing")
        if len(self.params) != len(self.alphas) or min(self.params) <= 0:
            raise ValueError("need one positive operator parameter per alpha")

    @property
    def weights(self) -> np.ndarray:
        return np.exp(-np.asarray(self.alphas, dtype=np.float64))


DEFAULT_ALPHAS = tuple(float(a) for a in range(1, 11))


def nyquist_radius(height: int, width: int) -> float:
    return min(height, width) / 2.0


def gaussian_schedule(alphas=DEFAULT_ALPHAS) -> AlphaSchedule:
    return AlphaSchedule(tuple(alphas), tuple(float(a) for a in alphas))


def lowpass_schedule(height: int, width: int, alphas=DEFAULT_ALPHAS) -> AlphaSchedule:
    """Cutoffs (11 - alpha)^2, scaled so alpha = 1 sits at the Nyquist radius."""
    raw = [(10.0 - a + 1.0) ** 2 for a in alphas]
    top = (10.0 - alphas[0] + 1.0) ** 2
    nyq = nyquist_radius(height, width)
    return AlphaSchedule(tuple(alphas), tuple(nyq * r / top for r in raw))


def _as_batch(images) -> tuple[np.ndarray, bool]:
    a = np.asarray(images, dtype=np.float64)
    if a.ndim == 2:
        return a[None, :, :, None], True
    if a.ndim == 3:
        return a[None], True
    if a.ndim == 4:
        return a, False
    raise ValueError(f"expected H x W x C or B x H x W x C, got shape {a.shape}")


def _restore(out: np.ndarray, single: bool, like) -> np.ndarray:
    if not single:
        return out
    return out[0].reshape(np.shape(like))


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(image, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel, radius ceil(3 sigma), replicate borders."""
    batch, single = _as_batch(image)
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(batch, k, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=2, mode="nearest")
    return _restore(out, single, image)


def _radial_index(height: int, width: int) -> np.ndarray:
    ky = np.fft.fftfreq(height) * height
    kx = np.fft.fftfreq(width) * width
    return np.hypot(ky[:, None], kx[None, :])


def lowpass_smooth(image, cutoff: float) -> np.ndarray:
    """Zero every 2-D DFT coefficient whose radial frequency index exceeds ``cutoff``."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    batch, single = _as_batch(image)
    H, W = batch.shape[1:3]
    keep = _radial_index(H, W) <= cutoff
    spec = np.fft.fft2(batch, axes=(1, 2))
    spec *= keep[None, :, :, None]
    out = np.fft.ifft2(spec, axes=(1, 2)).real
    return _restore(out, single, image)


def _apply(operator: str, batch: np.ndarray, param: float) -> np.ndarray:
    if operator == "gaussian":
        return gaussian_smooth(batch, param)
    if operator == "lowpass":
        return lowpass_smooth(batch, param)
    raise ValueError(f"unknown smoothing operator {operator!r}")


def default_schedule(operator: str, height: int, width: int) -> AlphaSchedule:
    if operator == "gaussian":
        return gaussian_schedule()
    if operator == "lowpass":
        return lowpass_schedule(height, width)
    raise ValueError(f"unknown smoothing operator {operator!r}")


def deviation_curve(image, operator: str, schedule: AlphaSchedule | None = None) -> np.ndarray:
    """Mean absolute change d(alpha_i) for each alpha in the schedule; shape (B, len(alphas))."""
    batch, single = _as_batch(image)
    if schedule is None:
        schedule = default_schedule(operator, *batch.shape[1:3])
    d = np.stack(
        [np.abs(_apply(operator, batch, c) - batch).mean(axis=(1, 2, 3)) for c in schedule.params],
        axis=1,
    )
    return d[0] if single else d


def smoothness_tc_batch(images, operator: str, schedule: AlphaSchedule | None = None) -> np.ndarray:
    batch, _ = _as_batch(images)
    if schedule is None:
        schedule = default_schedule(operator, *batch.shape[1:3])
    d = deviation_curve(batch, operator, schedule)
    # left Riemann sum, unit spacing
    return -(d @ schedule.weights)


def smoothness_tc(image, operator: str, schedule: AlphaSchedule | None = None) -> float:
    batch, _ = _as_batch(image)
    return float(smoothness_tc_batch(batch, operator, schedule)[0])


_NEIGHBOURS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


def taylor_stencil(neighborhood: int = 4) -> np.ndarray:
    """5 x 5 correlation kernel K with I_approx = correlate(I, K).

    For each neighbour a = x + o the first-order expansion evaluated at x is
    I(a) - <grad I(a), o>, with central differences
    grad_r I(a) = (I(a + e_r) - I(a - e_r)) / 2.
    """
    try:
        offsets = _NEIGHBOURS[neighborhood]
    except KeyError:
        raise ValueError("neighborhood must be 4 or 8") from None
    K = np.zeros((5, 5))
    w = 1.0 / len(offsets)
    for dr, dc in offsets:
        K[2 + dr, 2 + dc] += w
        if dr:
            K[2 + dr + 1, 2 + dc] -= w * dr / 2
            K[2 + dr - 1, 2 + dc] += w * dr / 2
        if dc:
            K[2 + dr, 2 + dc + 1] -= w * dc / 2
            K[2 + dr, 2 + dc - 1] += w * dc / 2
    return K


def taylor_approximation(image, neighborhood: int = 4) -> np.ndarray:
    batch, single = _as_batch(image)
    K = taylor_stencil(neighborhood)[None, :, :, None]
    out = ndimage.correlate(batch, K, mode="nearest")
    return _restore(out, single, image)


def smoothness_taylor_batch(images, neighborhood: int = 4) -> np.ndarray:
    batch, _ = _as_batch(images)
    H, W = batch.shape[1:3]
    if H < 5 or W < 5:
        raise ValueError("Taylor smoothness needs H, W >= 5 (stencil radius 2)")
    resid = (taylor_approximation(batch, neighborhood) - batch)[:, 2:-2, 2:-2, :]
    return -np.sqrt(np.sum(resid * resid, axis=(1, 2, 3)))


def smoothness_taylor(image, neighborhood: int = 4) -> float:
    batch, _ = _as_batch(image)
    return float(smoothness_taylor_batch(batch, neighborhood)[0])
