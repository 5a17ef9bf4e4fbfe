"""Fast numerical self-checks run by ``diffse selftest``."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from .denoiser import OracleDenoiser
from .rng import substream
from .sampler import SamplerConfig, expected_evaluations, sample
from .schedule import ScheduleParams, beta_raw, eval_point
from .spectral import StftConfig, compress, decompress, istft, stft


def _schedule_quadrature():
    p = ScheduleParams(beta_max=math.inf)
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        integral, _ = quad(lambda s: beta_raw(p, s), 0.0, t, epsabs=1e-13, epsrel=1e-12)
        scale = eval_point(p, t).scale
        worst = max(worst, abs(math.exp(-0.5 * integral) - scale))
    return worst < 1e-8, f"max |exp(-int beta / 2) - s| = {worst:.2e}"


def _stft_round_trip():
    cfg = StftConfig()
    spec = np.fft.rfft(substream(0, "selftest", "stft").standard_normal(16000))
    spec[int(0.45 * len(spec)):] = 0  # the dropped Nyquist bin cannot be restored
    x = np.fft.irfft(spec, n=16000)
    y = istft(decompress(compress(stft(x, cfg), cfg), cfg), cfg, len(x))
    inner = slice(cfg.frame_len, -cfg.frame_len)
    err = float(np.sqrt(np.mean((y - x)[inner] ** 2) / np.mean(x[inner] ** 2)))
    return err < 1e-6, f"interior relative round-trip error {err:.2e}"


def _oracle_recovery():
    rng = substream(0, "selftest", "atom")
    atom = 0.1 * (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
    cfg = SamplerConfig(kind="edm", n_steps=16)
    res = sample(OracleDenoiser([atom]), np.zeros_like(atom), cfg, ScheduleParams(), rng)
    rms = float(np.sqrt(np.mean(np.abs(res.n0 - atom) ** 2)))
    ok = rms < 1e-3 and res.n_evals == expected_evaluations(cfg)
    return ok, f"single-atom rms {rms:.2e}, {res.n_evals} evaluations"


CHECKS = {"schedule-quadrature": _schedule_quadrature, "stft-round-trip": _stft_round_trip,
          "oracle-recovery": _oracle_recovery}


def run_selftest() -> list[tuple[str, bool, str]]:
    return [(name, *fn()) for name, fn in CHECKS.items()]
