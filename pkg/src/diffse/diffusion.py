"""Forward kernel and reverse-SDE quantities for the environmental-noise process.

Spectrograms are plain complex numpy arrays of shape ``(K, frames)``. The
process diffuses the environmental noise ``n = x - y``; the conditioning
mixture ``y`` never enters the kernel, only the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SingularTimeError
from .schedule import SchedulePoint

__all__ = [
    "DiffusionState",
    "as_spectrogram",
    "check_same_shape",
    "sample_complex_gaussian",
    "forward_perturb",
    "score_from_denoised",
    "reverse_drift",
]


@dataclass
class DiffusionState:
    n_t: np.ndarray
    t: float


def as_spectrogram(a) -> np.ndarray:
    """Return ``a`` as a finite complex128 array."""
    arr = np.asarray(a, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise DomainError("spectrogram contains non-finite coefficients")
    return arr


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")


def sample_complex_gaussian(shape, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draw with the given complex variance.

    Real and imaginary parts are independent with variance ``variance / 2``.
    """
    if variance < 0:
        raise DomainError(f"variance must be non-negative, got {variance}")
    std = np.sqrt(0.5 * variance)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return std * z


def forward_perturb(n0: np.ndarray, point: SchedulePoint, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_t ~ CN(s n0, s^2 sigma^2 I)``."""
    n0 = np.asarray(n0, dtype=np.complex128)
    if point.sigma == 0.0:
        return n0.copy()
    eps = sample_complex_gaussian(n0.shape, 1.0, rng)
    return point.scale * n0 + point.scale * point.sigma * eps


def score_from_denoised(denoised: np.ndarray, n_t: np.ndarray, point: SchedulePoint) -> np.ndarray:
    """Score estimate ``(D - n_t/s) / (s sigma^2)``."""
    check_same_shape(denoised, n_t)
    if point.sigma == 0.0:
        raise SingularTimeError("score is undefined at sigma = 0")
    s = point.scale
    return (denoised - n_t / s) / (s * point.sigma**2)


def reverse_drift(n_t: np.ndarray, point: SchedulePoint, score: np.ndarray) -> np.ndarray:
    """Deterministic part ``f n_t - g^2 score`` of the reverse-time SDE."""
    check_same_shape(n_t, score)
    return point.drift_coeff * n_t - point.beta * score
