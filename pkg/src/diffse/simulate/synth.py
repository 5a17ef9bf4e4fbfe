"""Synthetic stand-ins for speech, noise and BRIR databases.

Each database index (0-4) uses distinct generator parameters so that
held-out databases differ measurably from training ones.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..rng import substream
from ..spectral import write_wav
from .manifest import DatabaseManifest, Entry, write_manifest

FS = 16000

# per-database generator parameters
_SPEECH_F0 = (110.0, 140.0, 175.0, 210.0, 95.0)
_SPEECH_FORMANT = (700.0, 1100.0, 500.0, 1500.0, 900.0)
_NOISE_TILT = (0.0, 0.6, 1.2, 1.8, 0.3)
_BRIR_T60 = (0.3, 0.45, 0.6, 0.35, 0.8)


def synth_speech(rng: np.random.Generator, duration_s: float, f0: float = 140.0,
                 formant: float = 900.0) -> np.ndarray:
    """Syllable-like harmonic bursts separated by exact-zero pauses."""
    n = int(round(duration_s * FS))
    x = np.zeros(n)
    pos = int(rng.uniform(0.15, 0.3) * FS)
    tail = int(0.2 * FS)
    while pos < n - tail:
        syl = int(rng.uniform(0.08, 0.25) * FS)
        syl = min(syl, n - tail - pos)
        if syl < 0.02 * FS:
            break
        t = np.arange(syl) / FS
        pitch = f0 * rng.uniform(0.8, 1.25) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(2, 6) * t))
        phase = 2 * np.pi * np.cumsum(pitch) / FS
        fc = formant * rng.uniform(0.7, 1.4)
        burst = np.zeros(syl)
        for k in range(1, int(4000 / f0) + 1):
            amp = math.exp(-0.5 * ((k * f0 - fc) / 600.0) ** 2) + 0.05 / k
            burst += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        env = np.sin(np.pi * np.arange(syl) / syl) ** 2
        x[pos:pos + syl] = burst * env * rng.uniform(0.4, 1.0)
        pos += syl
        if rng.random() < 0.35:
            pos += int(rng.uniform(0.1, 0.4) * FS)
        else:
            pos += int(rng.uniform(0.01, 0.05) * FS)
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


def synth_noise(rng: np.random.Generator, duration_s: float, tilt: float = 1.0) -> np.ndarray:
    """Coloured noise with power spectrum ~ f^-tilt, slow level modulation, RMS 0.1."""
    n = int(round(duration_s * FS))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / FS)
    f[0] = f[1]
    spec *= (f / 1000.0) ** (-tilt / 2)
    spec[-1] = 0
    x = np.fft.irfft(spec, n=n)
    t = np.arange(n) / FS
    x *= 1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return 0.1 * x / np.sqrt(np.mean(x**2))


def synth_brir(rng: np.random.Generator, angle_deg: float, t60: float, *,
               direct_delay_s: float = 0.004, n_reflections: int = 8,
               length_s: float | None = None) -> np.ndarray:
    """Stereo impulse response, shape ``(n, 2)``.

    Direct impulse with interaural time and level differences from the angle,
    sparse early reflections within 3-45 ms of the direct sound, and an
    exponentially decaying noise tail whose energy drops 60 dB in ``t60``.
    Positive angles lie to the right.
    """
    length_s = 1.5 * t60 + 0.05 if length_s is None else length_s
    n = int(round(length_s * FS))
    h = np.zeros((n, 2))
    sin_a = math.sin(math.radians(angle_deg))
    itd = 0.0007 * sin_a
    d0 = direct_delay_s
    delays = (d0 + max(itd, 0.0), d0 + max(-itd, 0.0))
    gains = (1.0 - 0.3 * sin_a, 1.0 + 0.3 * sin_a)
    for ch in range(2):
        h[int(round(delays[ch] * FS)), ch] += gains[ch]
    for _ in range(n_reflections):
        dt = rng.uniform(0.003, 0.045)
        amp = rng.uniform(0.2, 0.6) * math.exp(-3 * math.log(10) * dt / t60) * rng.choice((-1, 1))
        for ch in range(2):
            idx = int(round((d0 + dt + rng.uniform(-2e-4, 2e-4)) * FS))
            h[idx, ch] += amp
    start = int(round((d0 + 0.005) * FS))
    t = np.arange(n - start) / FS
    decay = np.exp(-3 * math.log(10) * t / t60)
    tail = rng.standard_normal((n - start, 2)) * decay[:, None]
    # late energy comparable to the direct path so the tail dominates the decay fit
    tail *= math.sqrt(2.0 / np.sum(tail**2))
    h[start:] += tail
    return h


def synth_database(kind: str, seed: int, out_dir, index: int = 0, *, n_items: int | None = None,
                   item_duration_s: float | None = None) -> DatabaseManifest:
    """Generate one synthetic database and its ``manifest.csv`` under ``out_dir/<name>``.

    ``n_items`` counts utterances, noise recordings, or rooms (13 angles each)
    depending on ``kind``. Output files are byte-identical for identical
    arguments.
    """
    if kind not in ("speech", "noise", "brir"):
        raise ValueError(f"unknown kind {kind!r}")
    idx = index % 5
    name = f"synth_{kind}_{index + 1}"  # numbered like folds, 1..5
    root = Path(out_dir) / name
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    if kind == "speech":
        for i in range(40 if n_items is None else n_items):
            rng = substream(seed, kind, index, i)
            dur = item_duration_s or rng.uniform(2.0, 4.0)
            x = synth_speech(rng, dur, _SPEECH_F0[idx], _SPEECH_FORMANT[idx])
            path = root / f"utt{i:04d}.wav"
            write_wav(path, x)
            entries.append(Entry(name, kind, path, f"utt{i:04d}"))
    elif kind == "noise":
        for i in range(6 if n_items is None else n_items):
            rng = substream(seed, kind, index, i)
            x = synth_noise(rng, item_duration_s or 30.0, _NOISE_TILT[idx] + rng.uniform(-0.2, 0.2))
            path = root / f"rec{i:03d}.wav"
            write_wav(path, x)
            entries.append(Entry(name, kind, path, f"rec{i:03d}"))
    else:
        n_rooms = 2 if n_items is None else max(1, n_items)
        for r in range(n_rooms):
            t60 = _BRIR_T60[idx] * (1 + 0.15 * r)
            for angle in range(-90, 91, 15):
                rng = substream(seed, kind, index, r, angle + 90)
                h = synth_brir(rng, angle, t60)
                item = f"room{r}_az{angle:+03d}"
                path = root / f"{item}.wav"
                write_wav(path, h)
                entries.append(Entry(name, kind, path, item, room=f"room{r}", angle_deg=float(angle)))
    manifest = DatabaseManifest(name, kind, entries)
    write_manifest(root / "manifest.csv", [manifest])
    return manifest


def synth_ensemble(out_dir, seed: int, *, n_speech: int | None = None, n_noise: int | None = None,
                   n_rooms: int | None = None) -> list[DatabaseManifest]:
    """Five databases of each kind plus a combined ``manifest.csv``."""
    out = []
    for kind, n in (("speech", n_speech), ("noise", n_noise), ("brir", n_rooms)):
        for i in range(5):
            out.append(synth_database(kind, seed, out_dir, i, n_items=n))
    write_manifest(Path(out_dir) / "manifest.csv", out)
    return out
