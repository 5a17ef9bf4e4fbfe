"""Objective metrics (SNR, SI-SDR, ESTOI) and batch evaluation with CSV output."""

from __future__ import annotations

import csv
import math
import shlex
import subprocess
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pystoi import stoi

from .errors import DataError, DimensionError, DomainError
from .spectral import read_wav

SNR_CAP_DB = 100.0

COLUMNS = (
    "mixture_id", "condition", "fold", "n_train", "system", "sampler", "n_steps",
    "snr_in", "snr_out", "delta_snr",
    "si_sdr_in", "si_sdr_out", "delta_si_sdr",
    "estoi_in", "estoi_out", "delta_estoi",
    "pesq_in", "pesq_out", "delta_pesq",
    "status",
)
METRICS = ("snr", "si_sdr", "estoi", "pesq")
GROUP_KEYS = ("condition", "fold", "n_train", "system", "sampler", "n_steps")


def _pair(est, ref):
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise DimensionError(f"length mismatch: {est.shape} vs {ref.shape}")
    if not np.any(ref):
        raise DomainError("reference signal is identically zero; metric undefined")
    return est, ref


def snr_db(estimate, reference) -> float:
    """``10 log10(sum ref^2 / sum (est - ref)^2)``; ``inf`` when ``est == ref``."""
    est, ref = _pair(estimate, reference)
    err = float(np.sum((est - ref) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(ref**2)) / err)


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB (auxiliary column)."""
    est, ref = _pair(estimate, reference)
    target = (np.dot(est, ref) / np.dot(ref, ref)) * ref
    err = float(np.sum((est - target) ** 2))
    if err == 0.0:
        return math.inf
    tp = float(np.sum(target**2))
    return 10.0 * math.log10(tp / err) if tp > 0 else -math.inf


def estoi(degraded, clean, sample_rate: int = 16000) -> float:
    """Extended STOI via ``pystoi``.

    Raises :class:`DomainError` when fewer than 30 non-silent frames remain,
    where ``pystoi`` would otherwise return a placeholder.
    """
    deg, ref = _pair(degraded, clean)
    if sample_rate != 16000:
        raise DomainError(f"ESTOI input must be 16 kHz, got {sample_rate}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        score = float(stoi(ref, deg, sample_rate, extended=True))
    for w in caught:
        if "Not enough STFT frames" in str(w.message):
            raise DomainError("signal too short for ESTOI after silent-frame removal")
    # a mean of correlations; clip rounding overshoot
    return min(max(score, -1.0), 1.0)


def capped(value: float) -> float:
    """Clip the infinite-SNR sentinel to the reporting cap."""
    return min(value, SNR_CAP_DB)


class PesqHook:
    """External PESQ scorer invoked as ``template.format(reference=..., degraded=...)``.

    The command's last whitespace-separated token on stdout is parsed as the
    score.
    """

    def __init__(self, template: str, timeout: float = 120.0):
        if "{reference}" not in template or "{degraded}" not in template:
            raise DomainError("PESQ command template needs {reference} and {degraded}")
        self.template = template
        self.timeout = timeout

    def __call__(self, reference: Path, degraded: Path) -> float:
        cmd = shlex.split(self.template.format(reference=shlex.quote(str(reference)),
                                               degraded=shlex.quote(str(degraded))))
        try:
            out = subprocess.run(cmd, capture_output=True, text=True, check=True, timeout=self.timeout)
            return float(out.stdout.split()[-1])
        except (OSError, subprocess.SubprocessError, ValueError, IndexError) as exc:
            raise DataError(f"PESQ hook failed: {exc}") from exc


@dataclass
class EvalResult:
    rows: list[dict]
    missing: list[str] = field(default_factory=list)

    def aggregate(self, keys=GROUP_KEYS) -> list[dict]:
        return aggregate(self.rows, keys)

    def write_csv(self, path) -> None:
        write_rows(path, self.rows, COLUMNS)


def _evaluate_one(row: dict, root: Path, enhanced_dir: Path, pesq: PesqHook | None) -> dict:
    out = {c: row.get(c, "") for c in COLUMNS}
    for m in METRICS:
        for suffix in ("in", "out"):
            out[f"{m}_{suffix}"] = math.nan
        out[f"delta_{m}"] = math.nan
    mix_path = root / row["files"]["mixture"]
    ref_path = root / row["files"]["target"]
    enh_path = enhanced_dir / f"{row['id']}.wav"
    if not enh_path.is_file():
        out["status"] = "missing"
        return out
    try:
        ref, mix, enh = read_wav(ref_path), read_wav(mix_path), read_wav(enh_path)
        # identical signals reuse the input score (summation order can depend on alignment)
        same = mix.shape == enh.shape and np.array_equal(mix, enh)

        def both(fn, a, b):
            first = fn(a)
            return first, first if same else fn(b)

        vals = {
            "snr": both(lambda x: capped(snr_db(x, ref)), mix, enh),
            "si_sdr": both(lambda x: capped(si_sdr(x, ref)), mix, enh),
            "estoi": both(lambda x: estoi(x, ref), mix, enh),
        }
        if pesq is not None:
            vals["pesq"] = both(lambda p: pesq(ref_path, p), mix_path, enh_path)
    except (DataError, DomainError, DimensionError) as exc:
        out["status"] = f"error: {exc}"
        return out
    for m, (a, b) in vals.items():
        out[f"{m}_in"], out[f"{m}_out"], out[f"delta_{m}"] = a, b, b - a
    out["status"] = "ok"
    return out


def evaluate_batch(index: dict, enhanced_dir, labels: dict | None = None, *,
                   pesq_command: str | None = None, workers: int = 1) -> EvalResult:
    """Per-mixture metrics for every mixture in a dataset index.

    Enhanced files are looked up as ``<enhanced_dir>/<mixture id>.wav``.
    Missing files yield rows with status ``missing`` and NaN metrics; the
    remaining mixtures are still evaluated.
    """
    root = Path(index["_root"])
    enhanced_dir = Path(enhanced_dir)
    fold = index.get("fold", {})
    base = {"fold": fold.get("fold_index", ""), "n_train": fold.get("n_train", ""), **(labels or {})}
    pesq = PesqHook(pesq_command) if pesq_command else None
    rows_in = [{**base, "mixture_id": r["id"], "condition": r.get("condition", index.get("condition", "")),
                "files": r["files"], "id": r["id"]} for r in index["mixtures"]]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        rows = list(ex.map(lambda r: _evaluate_one(r, root, enhanced_dir, pesq), rows_in))
    return EvalResult(rows, [r["mixture_id"] for r in rows if r["status"] == "missing"])


def aggregate(rows: list[dict], keys=GROUP_KEYS) -> list[dict]:
    """Mean of every metric column per group, ignoring NaN cells."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k, "") for k in keys), []).append(r)
    out = []
    for key, members in groups.items():
        agg = dict(zip(keys, key))
        agg["n_mixtures"] = len(members)
        agg["n_ok"] = sum(r["status"] == "ok" for r in members)
        for m in METRICS:
            for col in (f"{m}_in", f"{m}_out", f"delta_{m}"):
                vals = np.array([r.get(col, math.nan) for r in members], dtype=float)
                vals = vals[~np.isnan(vals)]
                agg[col] = float(vals.mean()) if len(vals) else math.nan
        out.append(agg)
    return out


def write_rows(path, rows: list[dict], columns) -> None:
    """CSV with a fixed column order; NaN cells are written empty."""
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if isinstance(v, float) and math.isnan(v) else v for k, v in r.items()})
