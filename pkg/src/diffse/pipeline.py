"""Dataset-level enhancement and denoiser fitting."""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .denoiser import DenoiserModel, GaussianDenoiser, LinearDenoiser, OracleDenoiser, fit_linear_denoiser
from .errors import ConfigError, DataError, DiffseError
from .rng import substream
from .sampler import SamplerConfig, enhance, expected_evaluations, sample
from .schedule import ScheduleParams
from .spectral import StftConfig, coefficient_variance, compress, decompress, istft, read_wav, stft, write_wav


def compressed_spectrogram(wave: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    return compress(stft(wave, cfg), cfg)


def noise_pair(mixture: np.ndarray, target: np.ndarray, cfg: StftConfig = StftConfig()):
    """``(n0, y)`` in the compressed domain, with ``n0 = y - x0``."""
    y = compressed_spectrogram(mixture, cfg)
    return y - compressed_spectrogram(target, cfg), y


def _paths(index: dict, row: dict) -> dict[str, Path]:
    root = Path(index["_root"])
    return {k: root / v for k, v in row["files"].items()}


def load_pairs(index: dict, cfg: StftConfig = StftConfig()) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for row in index["mixtures"]:
        p = _paths(index, row)
        pairs.append(noise_pair(read_wav(p["mixture"]), read_wav(p["target"]), cfg))
    return pairs


def fit_from_index(index: dict, schedule: ScheduleParams, seed: int, *, n_sigma_bins: int = 32,
                   n_time_samples: int = 16, per_frequency: bool = True,
                   cfg: StftConfig = StftConfig()) -> LinearDenoiser:
    """Fit a linear denoiser on a rendered training split.

    The measured mean ``|x0|^2`` of compressed clean spectrograms is stored in
    the diagnostics next to the configured ``sigma_data``.
    """
    pairs = load_pairs(index, cfg)
    if not pairs:
        raise DataError("training index has no mixtures")
    model = fit_linear_denoiser(pairs, schedule, n_sigma_bins, substream(seed, "fit"),
                                n_time_samples=n_time_samples, per_frequency=per_frequency)
    clean_var = coefficient_variance(y - n0 for n0, y in pairs)
    model.diagnostics["measured_clean_variance"] = clean_var
    model.diagnostics["measured_sigma_data"] = float(np.sqrt(clean_var))
    return model


def resolve_denoiser(kind: str, *, model_path: str | None = None, sigma_prior: float = 0.1):
    """Return ``factory(n0_true) -> DenoiserModel``.

    Only the oracle uses ``n0_true``: its atom set is the true noise
    spectrogram of the mixture being enhanced.
    """
    if kind == "gaussian":
        model = GaussianDenoiser(sigma_prior)
        return lambda n0: model
    if kind == "oracle":
        return lambda n0: OracleDenoiser([n0])
    if kind == "linear":
        if model_path is None:
            raise ConfigError("the linear denoiser needs a model file")
        if not Path(model_path).is_file():
            raise DataError(f"missing model file {model_path}")
        model = LinearDenoiser.load(model_path)
        return lambda n0: model
    raise ConfigError(f"unknown denoiser kind {kind!r}")


def enhance_waveform(mixture: np.ndarray, denoiser: DenoiserModel, sampler_cfg: SamplerConfig,
                     schedule: ScheduleParams, rng: np.random.Generator,
                     cfg: StftConfig = StftConfig()):
    """STFT, compress, sample the noise, subtract, decompress, inverse STFT."""
    y = compressed_spectrogram(mixture, cfg)
    res = sample(denoiser, y, sampler_cfg, schedule, rng)
    x_hat = enhance(y, res.n0)
    wave = istft(decompress(x_hat, cfg), cfg, len(mixture))
    return wave, res


def content_hash(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(str(x) for x in paths):
        h.update(p.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def enhance_dataset(index: dict, out_dir, denoiser_kind: str, sampler_cfg: SamplerConfig,
                    schedule: ScheduleParams, seed: int, *, model_path: str | None = None,
                    sigma_prior: float = 0.1, workers: int = 1, config: dict | None = None,
                    cfg: StftConfig = StftConfig()) -> dict:
    """Enhance every mixture of ``index`` into ``out_dir/<id>.wav`` and write ``run.json``.

    Per-mixture failures are recorded in the report and do not stop the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factory = resolve_denoiser(denoiser_kind, model_path=model_path, sigma_prior=sigma_prior)

    def work(row):
        p = _paths(index, row)
        try:
            mixture = read_wav(p["mixture"])
            n0 = noise_pair(mixture, read_wav(p["target"]), cfg)[0] if denoiser_kind == "oracle" else None
            rng = substream(seed, "sampler", sampler_cfg.kind, sampler_cfg.n_steps, row["id"])
            wave, res = enhance_waveform(mixture, factory(n0), sampler_cfg, schedule, rng, cfg)
            write_wav(out_dir / f"{row['id']}.wav", wave)
        except DiffseError as exc:
            return {"id": row["id"], "status": "error", "error": f"{type(exc).__name__}: {exc}"}
        return {"id": row["id"], "status": "ok", "n_evals": res.n_evals,
                "diagnostics": {k: v for k, v in res.diagnostics.items()}}

    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        rows = list(ex.map(work, index["mixtures"]))
    inputs = [Path(index["_root"]) / "index.json"] + ([Path(model_path)] if model_path else [])
    report = {
        "system": denoiser_kind,
        "sampler": asdict(sampler_cfg),
        "expected_evaluations": expected_evaluations(sampler_cfg),
        "schedule": asdict(schedule),
        "seed": seed,
        "dataset": str(index["_root"]),
        "config": config,
        "input_hash": content_hash(inputs),
        "n_ok": sum(r["status"] == "ok" for r in rows),
        "n_failed": sum(r["status"] != "ok" for r in rows),
        "elapsed_s": round(time.perf_counter() - t0, 3),
        "mixtures": rows,
    }
    (out_dir / "run.json").write_text(json.dumps(_json_safe(report), indent=1, sort_keys=True) + "\n")
    return report


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, float) and math.isinf(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
