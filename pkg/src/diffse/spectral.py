"""STFT analysis/synthesis, magnitude compression and WAV I/O.

Frames are taken without head padding; the tail is zero-padded so the last
frame is complete. Synthesis is weighted overlap-add normalised by the summed
squared window (floored near the signal edges), which is an exact inverse
wherever at least two frames overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import ConfigError, DataError, DimensionError, DomainError

__all__ = [
    "StftConfig",
    "n_frames",
    "stft",
    "istft",
    "compress",
    "decompress",
    "coefficient_variance",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class StftConfig:
    """STFT and compression parameters.

    Attributes
    ----------
    sample_rate : int
        Required audio rate in Hz.
    frame_len, hop : int
        Frame length and hop in samples; ``frame_len == 4 * hop``.
    kept_bins : int
        Number of retained frequency bins (DC up to, not including, Nyquist).
    amp_scale, compress_exp : float
        ``A`` and ``alpha`` of the compression ``A |c|^alpha exp(i angle c)``.
    """

    sample_rate: int = 16000
    frame_len: int = 512
    hop: int = 128
    kept_bins: int = 256
    amp_scale: float = 0.15
    compress_exp: float = 0.5

    def __post_init__(self):
        if self.frame_len != 4 * self.hop or self.hop < 1:
            raise ConfigError("frame_len must equal 4 * hop")
        if self.kept_bins != self.frame_len // 2:
            raise ConfigError("kept_bins must equal frame_len / 2")
        if not (0 < self.compress_exp <= 1) or not self.amp_scale > 0:
            raise ConfigError("need 0 < compress_exp <= 1 and amp_scale > 0")

    @property
    def window(self) -> np.ndarray:
        return get_window("hann", self.frame_len, fftbins=True)


def n_frames(n_samples: int, cfg: StftConfig) -> int:
    """Frame count for a signal of ``n_samples`` under tail padding."""
    if n_samples < cfg.frame_len:
        raise DomainError(f"signal of {n_samples} samples is shorter than one frame ({cfg.frame_len})")
    return math.ceil((n_samples - cfg.frame_len) / cfg.hop) + 1


def stft(signal: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex spectrogram of shape ``(kept_bins, n_frames)``."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("stft expects a mono 1-D signal")
    m = n_frames(len(x), cfg)
    padded = np.zeros((m - 1) * cfg.hop + cfg.frame_len)
    padded[: len(x)] = x
    frames = sliding_window_view(padded, cfg.frame_len)[:: cfg.hop] * cfg.window
    spec = np.fft.rfft(frames, axis=-1)[:, : cfg.kept_bins]
    return np.ascontiguousarray(spec.T)


def istft(spec: np.ndarray, cfg: StftConfig = StftConfig(), out_len: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft` with a zero Nyquist bin reinserted."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.kept_bins:
        raise DimensionError(f"expected a spectrogram with {cfg.kept_bins} rows, got shape {spec.shape}")
    m = spec.shape[1]
    full = np.concatenate([spec, np.zeros((1, m), dtype=spec.dtype)], axis=0)
    frames = np.fft.irfft(full, n=cfg.frame_len, axis=0).T * cfg.window
    total = (m - 1) * cfg.hop + cfg.frame_len
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = cfg.window**2
    for j in range(m):
        sl = slice(j * cfg.hop, j * cfg.hop + cfg.frame_len)
        out[sl] += frames[j]
        norm[sl] += w2
    # edge samples covered only by a window's tail would amplify anything the
    # frames cannot represent (e.g. the dropped Nyquist bin); floor the divisor
    floor = 0.01 * np.sum(w2) / (cfg.frame_len // cfg.hop)
    out /= np.maximum(norm, floor)
    if out_len is None:
        return out
    if out_len > total:
        raise DimensionError(f"out_len {out_len} exceeds the {total} samples covered by {m} frames")
    return out[:out_len]


def compress(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Magnitude compression ``A |c|^alpha e^{i angle c}`` (0 maps to 0)."""
    return _rescale(spec, cfg.amp_scale, cfg.compress_exp)


def decompress(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Inverse of :func:`compress`."""
    alpha = 1.0 / cfg.compress_exp
    return _rescale(spec, cfg.amp_scale ** -alpha, alpha)


def _rescale(spec, gain: float, power: float) -> np.ndarray:
    # c -> gain |c|^power e^{i angle c}, as a positive real factor on c so the
    # phase only sees rounding of the product
    c = np.asarray(spec, dtype=np.complex128)
    mag = np.abs(c)
    out = np.zeros_like(c)
    nz = mag > 0
    out[nz] = c[nz] * (gain * mag[nz] ** (power - 1.0))
    return out


def coefficient_variance(specs) -> float:
    """Mean ``|c|^2`` over all coefficients of one or more spectrograms."""
    total, count = 0.0, 0
    for s in specs:
        s = np.asarray(s)
        total += float(np.sum(np.abs(s) ** 2))
        count += s.size
    if count == 0:
        raise DataError("no coefficients to average")
    return total / count


def read_wav(path, sample_rate: int = 16000) -> np.ndarray:
    """Read a WAV file as float64 in [-1, 1].

    Returns shape ``(n,)`` for mono and ``(n, channels)`` otherwise. Only
    16-bit PCM and 32-bit float files at ``sample_rate`` are accepted.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read WAV ({exc})") from exc
    if rate != sample_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise DataError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, signal: np.ndarray, sample_rate: int = 16000, fmt: str = "float32") -> None:
    """Write mono ``(n,)`` or multichannel ``(n, channels)`` audio."""
    x = np.asarray(signal, dtype=np.float64)
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "int16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ConfigError(f"unknown WAV format {fmt!r}; use 'float32' or 'int16'")
    if not np.all(np.isfinite(data)):
        raise DomainError("refusing to write non-finite samples")
    wavfile.write(Path(path), sample_rate, data)
