"""Reverse-time samplers: predictor-corrector (PC) and stochastic Heun (EDM).

Both integrate from ``t_end`` down to ``t_floor`` (0 by default) on an evenly
spaced time grid and return an estimate of the environmental noise ``n0``.
The enhanced spectrogram is then ``y - n0_hat`` (see :func:`enhance`).

The EDM sampler works in the scale-normalised variable ``z = n / s(t)``.
Under the forward kernel ``z_t = n0 + sigma(t) eps``, so the Heun scheme for
variance-exploding diffusions applies unchanged with sigma as the integration
variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserModel
from .diffusion import (
    DiffusionState,
    check_same_shape,
    reverse_drift,
    sample_complex_gaussian,
    score_from_denoised,
)
from .errors import ConfigError
from .schedule import ScheduleParams, SchedulePoint, eval_point, sigma_max

__all__ = [
    "SamplerConfig",
    "SampleResult",
    "time_grid",
    "init_prior",
    "pc_sample",
    "edm_sample",
    "sample",
    "enhance",
    "expected_evaluations",
    "langevin_step",
]

SAMPLER_KINDS = ("pc", "edm")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "edm"
    n_steps: int = 16
    r: float = 0.5
    n_corrector: int = 1
    s_churn: float = math.inf
    s_min: float = 0.0
    s_max: float = math.inf
    s_noise: float = 1.0
    seed: int = 0
    t_floor: float = 0.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("n_steps must be a positive integer")
        if not self.r > 0:
            raise ConfigError("r must be positive")
        if self.n_corrector < 0:
            raise ConfigError("n_corrector must be >= 0")
        if not self.s_noise > 0:
            raise ConfigError("s_noise must be positive")
        if not (0 <= self.s_min <= self.s_max):
            raise ConfigError("need 0 <= s_min <= s_max")
        if self.s_churn < 0:
            raise ConfigError("s_churn must be >= 0")
        if self.t_floor < 0:
            raise ConfigError("t_floor must be >= 0")


@dataclass
class SampleResult:
    n0: np.ndarray
    n_evals: int
    diagnostics: dict = field(default_factory=dict)


def expected_evaluations(cfg: SamplerConfig) -> int:
    """Denoiser calls made by one run of ``cfg`` (ignoring skipped correctors)."""
    if cfg.kind == "pc":
        return cfg.n_steps * (1 + cfg.n_corrector)
    return 2 * cfg.n_steps - 1 if cfg.t_floor == 0 else 2 * cfg.n_steps


def time_grid(schedule: ScheduleParams, n_steps: int, t_floor: float = 0.0) -> np.ndarray:
    """Evenly spaced times from ``t_end`` down to ``t_floor`` (``n_steps + 1`` points)."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if not (0.0 <= t_floor < schedule.t_end):
        raise ConfigError(f"t_floor must lie in [0, {schedule.t_end})")
    i = np.arange(n_steps + 1)
    ts = schedule.t_end - (schedule.t_end - t_floor) * i / n_steps
    ts[-1] = t_floor
    return ts


def init_prior(schedule: ScheduleParams, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_T ~ CN(0, s(T)^2 sigma(T)^2 I)``."""
    p = eval_point(schedule, schedule.t_end)
    return sample_complex_gaussian(shape, (p.scale * p.sigma) ** 2, rng)


def langevin_step(n: np.ndarray, score: np.ndarray, r: float, rng: np.random.Generator):
    """One annealed Langevin corrector step with signal-to-noise ratio ``r``.

    Returns ``(n_new, applied)``; a zero score leaves ``n`` unchanged.
    """
    eps = sample_complex_gaussian(n.shape, 1.0, rng)
    sc_norm = np.linalg.norm(score)
    if sc_norm == 0.0:
        return n, False
    delta = 2.0 * (r * np.linalg.norm(eps) / sc_norm) ** 2
    return n + delta * score + math.sqrt(2.0 * delta) * eps, True


class _Counted:
    def __init__(self, denoiser: DenoiserModel):
        self.denoiser = denoiser
        self.calls = 0

    def __call__(self, x, y, sigma):
        self.calls += 1
        return self.denoiser.denoise(x, y, sigma)


def _rng_for(cfg: SamplerConfig, rng):
    return np.random.default_rng(cfg.seed) if rng is None else rng


def pc_sample(denoiser: DenoiserModel, y: np.ndarray, cfg: SamplerConfig, schedule: ScheduleParams,
              rng: np.random.Generator | None = None, *, stats: dict | None = None,
              probability_flow: bool = False, x_init: np.ndarray | None = None,
              callback=None) -> np.ndarray:
    """Predictor-corrector sampler.

    Each outer step first applies ``n_corrector`` annealed Langevin steps at
    ``t_i`` (step ``2 (r |eps| / |score|)^2``) and then one Euler-Maruyama step
    of the reverse SDE to ``t_{i+1}``.

    ``probability_flow=True`` is a deterministic testing mode: correctors are
    skipped and the predictor integrates the probability-flow ODE with Euler.
    """
    if cfg.kind != "pc":
        raise ConfigError("pc_sample needs cfg.kind == 'pc'")
    rng = _rng_for(cfg, rng)
    y = np.asarray(y, dtype=np.complex128)
    D = _Counted(denoiser)
    ts = time_grid(schedule, cfg.n_steps, cfg.t_floor)
    if x_init is None:
        n = init_prior(schedule, y.shape, rng)
    else:
        check_same_shape(x_init, y)
        n = np.asarray(x_init, dtype=np.complex128).copy()
    skipped = 0

    def score(n_t, p: SchedulePoint):
        return score_from_denoised(D(n_t / p.scale, y, p.sigma), n_t, p)

    for i in range(cfg.n_steps):
        p = eval_point(schedule, ts[i])
        h = ts[i] - ts[i + 1]
        if not probability_flow:
            for _ in range(cfg.n_corrector):
                n, ok = langevin_step(n, score(n, p), cfg.r, rng)
                skipped += not ok
        sc = score(n, p)
        if probability_flow:
            n = n - h * (p.drift_coeff * n - 0.5 * p.beta * sc)
        else:
            eps = sample_complex_gaussian(n.shape, 1.0, rng)
            n = n - h * reverse_drift(n, p, sc) + p.diffusion_coeff * math.sqrt(h) * eps
        if callback is not None:
            callback(DiffusionState(n, float(ts[i + 1])))

    if stats is not None:
        stats.update(n_evals=D.calls, skipped_correctors=skipped)
    return n


def edm_sample(denoiser: DenoiserModel, y: np.ndarray, cfg: SamplerConfig, schedule: ScheduleParams,
               rng: np.random.Generator | None = None, *, stats: dict | None = None,
               x_init: np.ndarray | None = None, callback=None) -> np.ndarray:
    """Second-order stochastic Heun sampler with noise churn.

    ``x_init`` (optional) replaces the prior draw of ``n_T``.
    """
    if cfg.kind != "edm":
        raise ConfigError("edm_sample needs cfg.kind == 'edm'")
    rng = _rng_for(cfg, rng)
    y = np.asarray(y, dtype=np.complex128)
    D = _Counted(denoiser)
    ts = time_grid(schedule, cfg.n_steps, cfg.t_floor)
    points = [eval_point(schedule, t) for t in ts]
    sigmas = [p.sigma for p in points]
    top = sigma_max(schedule)

    if x_init is None:
        n = init_prior(schedule, y.shape, rng)
    else:
        check_same_shape(x_init, y)
        n = np.asarray(x_init, dtype=np.complex128)
    z = n / points[0].scale
    gamma_max = math.sqrt(2.0) - 1.0
    clips = 0
    gammas = []

    for i in range(cfg.n_steps):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        gamma = min(cfg.s_churn / cfg.n_steps, gamma_max) if cfg.s_min <= s_cur <= cfg.s_max else 0.0
        gammas.append(gamma)
        s_hat = s_cur * (1.0 + gamma)
        if s_hat > top:
            s_hat = top
            clips += 1
        if s_hat > s_cur:
            eps = sample_complex_gaussian(z.shape, 1.0, rng)
            z = z + cfg.s_noise * math.sqrt(s_hat**2 - s_cur**2) * eps

        d = (z - D(z, y, s_hat)) / s_hat
        z_next = z + (s_next - s_hat) * d
        if s_next > 0:
            d2 = (z_next - D(z_next, y, s_next)) / s_next
            z_next = z + (s_next - s_hat) * 0.5 * (d + d2)
        z = z_next
        if callback is not None:
            callback(DiffusionState(z * points[i + 1].scale, float(ts[i + 1])))

    if stats is not None:
        stats.update(n_evals=D.calls, sigma_hat_clips=clips, gammas=gammas)
    return z * points[-1].scale


def sample(denoiser: DenoiserModel, y: np.ndarray, cfg: SamplerConfig, schedule: ScheduleParams,
           rng: np.random.Generator | None = None) -> SampleResult:
    """Run the sampler selected by ``cfg.kind`` and collect diagnostics."""
    stats: dict = {}
    fn = pc_sample if cfg.kind == "pc" else edm_sample
    n0 = fn(denoiser, y, cfg, schedule, rng, stats=stats)
    n_evals = stats.pop("n_evals")
    stats.pop("gammas", None)
    return SampleResult(n0=n0, n_evals=n_evals, diagnostics=stats)


def enhance(y: np.ndarray, n0_estimate: np.ndarray) -> np.ndarray:
    """Clean-speech estimate ``y - n0_hat``."""
    check_same_shape(y, n0_estimate)
    return np.asarray(y) - np.asarray(n0_estimate)
