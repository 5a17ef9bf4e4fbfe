"""Shifted-cosine variance-preserving noise schedule.

The schedule is parametrised by its log-SNR

    lambda(t) = -2 log tan(pi t / 2) + 2 nu,

from which ``sigma = exp(-lambda / 2)``, ``s = 1 / sqrt(1 + sigma^2)`` and the
VP rate ``beta`` follow in closed form. Two clamps keep the process finite near
``t = 1``: ``lambda >= lambda_min`` and ``beta <= beta_max``. They act
independently; sigma and s are always derived from the clamped log-SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "ScheduleParams",
    "SchedulePoint",
    "eval_point",
    "sigma_inverse",
    "raw_log_snr",
    "beta_tan_form",
    "beta_csc_form",
    "beta_raw",
    "sigma_max",
    "lambda_clamp_time",
    "sigma_at",
]


@dataclass(frozen=True)
class ScheduleParams:
    nu: float = 1.5
    lambda_min: float = -12.0
    beta_max: float = 10.0
    t_end: float = 1.0
    t_eps: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.t_end <= 1.0):
            raise DomainError(f"t_end must lie in (0, 1], got {self.t_end}")
        if not (0.0 < self.t_eps < self.t_end):
            raise DomainError(f"need 0 < t_eps < t_end, got t_eps={self.t_eps}")
        if not self.lambda_min < 2.0 * self.nu:
            raise DomainError("lambda_min must be below 2*nu")
        if not self.beta_max > 0.0:
            raise DomainError("beta_max must be positive")


@dataclass(frozen=True)
class SchedulePoint:
    """Schedule quantities evaluated at one time.

    ``log_snr`` is ``None`` at ``t = 0`` (no noise); every other field is a
    finite float there (sigma = beta = 0, scale = 1).
    """

    t: float
    log_snr: float | None
    sigma: float
    scale: float
    beta: float
    lambda_clamped: bool = False
    beta_clamped: bool = False

    @property
    def drift_coeff(self) -> float:
        return -0.5 * self.beta

    @property
    def diffusion_coeff(self) -> float:
        return math.sqrt(self.beta)

    @property
    def noiseless(self) -> bool:
        return self.log_snr is None


def raw_log_snr(params: ScheduleParams, t: float) -> float:
    """Unclamped log-SNR; ``+inf`` at t = 0 and ``-inf`` at t = 1."""
    if t <= 0.0:
        return math.inf
    if t >= 1.0:
        return -math.inf
    return -2.0 * math.log(math.tan(0.5 * math.pi * t)) + 2.0 * params.nu


def beta_tan_form(params: ScheduleParams, t: float) -> float:
    u = 0.5 * math.pi * t
    tn = math.tan(u)
    return math.pi / math.cos(u) ** 2 * tn / (math.exp(2.0 * params.nu) + tn * tn)


def beta_csc_form(params: ScheduleParams, t: float) -> float:
    tn = math.tan(0.5 * math.pi * t)
    return 2.0 * math.pi / math.sin(math.pi * t) / (1.0 + math.exp(2.0 * params.nu) / (tn * tn))


def beta_raw(params: ScheduleParams, t: float) -> float:
    """Unclamped VP rate. Zero at t = 0, infinite at t = 1."""
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return math.inf
    # each form loses precision at the opposite end of the interval
    if 0.25 < t < 0.75:
        return beta_csc_form(params, t)
    return beta_tan_form(params, t)


def eval_point(params: ScheduleParams, t: float) -> SchedulePoint:
    """Evaluate the clamped schedule at time ``t`` in ``[0, t_end]``."""
    t = float(t)
    if not (0.0 <= t <= params.t_end) or math.isnan(t):
        raise DomainError(f"t={t} outside [0, {params.t_end}]")
    if t == 0.0:
        return SchedulePoint(t=0.0, log_snr=None, sigma=0.0, scale=1.0, beta=0.0)

    lam = raw_log_snr(params, t)
    lam_clamped = lam < params.lambda_min
    if lam_clamped:
        lam = params.lambda_min
    sigma = math.exp(-0.5 * lam)
    scale = 1.0 / math.sqrt(1.0 + sigma * sigma)

    beta = beta_raw(params, t)
    beta_clamped = beta > params.beta_max
    if beta_clamped:
        beta = params.beta_max

    return SchedulePoint(
        t=t,
        log_snr=lam,
        sigma=sigma,
        scale=scale,
        beta=beta,
        lambda_clamped=lam_clamped,
        beta_clamped=beta_clamped,
    )


def sigma_at(params: ScheduleParams, t) -> np.ndarray:
    """Vectorised clamped noise level; matches ``eval_point(params, t).sigma``."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > params.t_end)):
        raise DomainError(f"times outside [0, {params.t_end}]")
    with np.errstate(divide="ignore"):
        lam = -2.0 * np.log(np.tan(0.5 * np.pi * t)) + 2.0 * params.nu
    lam = np.maximum(lam, params.lambda_min)
    return np.where(t == 0, 0.0, np.exp(-0.5 * lam))


def sigma_max(params: ScheduleParams) -> float:
    """Largest noise level reached by the clamped schedule (at ``t_end``)."""
    return eval_point(params, params.t_end).sigma


def sigma_inverse(params: ScheduleParams, sigma: float) -> float:
    """Map a noise level back to the earliest time that attains it."""
    if sigma < 0.0 or math.isnan(sigma):
        raise DomainError(f"sigma must be non-negative, got {sigma}")
    top = sigma_max(params)
    if sigma > top * (1.0 + 1e-12):
        raise DomainError(f"sigma={sigma} above schedule maximum {top}")
    return min(2.0 / math.pi * math.atan(sigma * math.exp(params.nu)), params.t_end)


def lambda_clamp_time(params: ScheduleParams) -> float:
    """Time at which the raw log-SNR reaches ``lambda_min``."""
    return 2.0 / math.pi * math.atan(math.exp(params.nu - 0.5 * params.lambda_min))
