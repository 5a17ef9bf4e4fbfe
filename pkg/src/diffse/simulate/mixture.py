"""BRIR splitting, mixture rendering and dataset writing."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from ..errors import ConfigError, DataError, DegenerateInputError
from ..rng import substream
from ..spectral import write_wav
from .folds import FoldPlan, Pools
from .manifest import DatabaseManifest

FS = 16000
SNR_RANGE = (-5.0, 10.0)
SNR_MODES = ("downmix", "binaural")
INDEX_FORMAT = "diffse-dataset"


def split_brir(brir: np.ndarray, boundary_ms: float = 50.0, sample_rate: int = FS):
    """Split an impulse response at the direct peak plus ``boundary_ms``.

    Returns ``(early, late)`` with complementary rectangular windows, so
    ``early + late == brir`` exactly. Works on mono ``(n,)`` or ``(n, ch)``.
    """
    h = np.asarray(brir, dtype=np.float64)
    if h.size == 0:
        raise DegenerateInputError("empty impulse response")
    mag = np.abs(h) if h.ndim == 1 else np.max(np.abs(h), axis=1)
    if not np.any(mag > 0):
        raise DegenerateInputError("impulse response is all zeros")
    peak = int(np.argmax(mag))
    cut = min(peak + int(round(boundary_ms * 1e-3 * sample_rate)) + 1, len(h))
    early = np.zeros_like(h)
    late = np.zeros_like(h)
    early[:cut] = h[:cut]
    late[cut:] = h[cut:]
    return early, late


@dataclass
class MixtureSpec:
    """Everything needed to re-render one mixture from the manifests."""

    seed: int
    speech_db: str
    speech_id: str
    brir_db: str
    room: str
    speech_brir: str
    noises: list[dict]  # {"db", "item", "offset", "brir"}
    snr_db: float

    def __post_init__(self):
        if not 1 <= len(self.noises) <= 3:
            raise ConfigError("a mixture needs 1 to 3 noise sources")
        if not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ConfigError(f"snr_db {self.snr_db} outside {SNR_RANGE}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"malformed mixture spec: {exc}") from None


@dataclass
class Mixture:
    y: np.ndarray
    target: np.ndarray
    noise_total: np.ndarray
    metadata: dict = field(default_factory=dict)


def draw_mixture_spec(pools: Pools, seed: int) -> MixtureSpec:
    """Random speech, room, 1-3 noise segments, angles and SNR."""
    rng = np.random.default_rng(seed)
    speech = pools.speech[rng.integers(len(pools.speech))]
    n = len(speech.load())
    room_keys = sorted(pools.rooms)
    brir_db, room = room_keys[rng.integers(len(room_keys))]
    brirs = pools.rooms[(brir_db, room)]
    usable = [s for s in pools.noise if s.stop - s.start >= n]
    if not usable:
        raise DataError(f"no noise segment is as long as utterance {speech.item_id} ({n} samples)")
    noises = []
    for _ in range(int(rng.integers(1, 4))):
        seg = usable[rng.integers(len(usable))]
        offset = int(rng.integers(seg.start, seg.stop - n + 1))
        noises.append({"db": seg.entry.database, "item": seg.entry.item_id, "offset": offset,
                       "brir": brirs[rng.integers(len(brirs))].item_id})
    return MixtureSpec(
        seed=int(seed), speech_db=speech.database, speech_id=speech.item_id, brir_db=brir_db, room=room,
        speech_brir=brirs[rng.integers(len(brirs))].item_id, noises=noises,
        snr_db=float(rng.uniform(*SNR_RANGE)),
    )


def _spatialize(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return fftconvolve(x[:, None], h, axes=0)[: len(x)]


def _mono(x: np.ndarray, what: str) -> np.ndarray:
    if x.ndim != 1:
        raise DataError(f"{what}: expected mono audio")
    return x


def noise_gain(e_target: float, e_late: float, e_cross: float, e_noise: float, snr_db: float):
    """Gain ``g >= 0`` with ``e_target / (e_late + 2 g e_cross + g^2 e_noise) = 10^(snr/10)``.

    Returns ``(g, feasible)``; infeasible when the late energy alone exceeds
    the noise budget or there is no external noise energy.
    """
    budget = e_target / 10.0 ** (snr_db / 10.0)
    if e_late > budget or e_noise <= 0.0:
        return 0.0, False
    disc = e_cross**2 + e_noise * (budget - e_late)
    return (-e_cross + math.sqrt(disc)) / e_noise, True


def render_mixture(spec: MixtureSpec, manifests: dict[str, DatabaseManifest],
                   snr_mode: str = "downmix", boundary_ms: float = 50.0) -> Mixture:
    """Render ``spec`` into downmixed ``y``, ``target`` and ``noise_total``.

    ``snr_mode='downmix'`` enforces the SNR on the returned mono signals;
    ``'binaural'`` enforces it on the two-ear signals before averaging.
    """
    if snr_mode not in SNR_MODES:
        raise ConfigError(f"snr_mode must be one of {SNR_MODES}")
    try:
        speech = _mono(manifests[spec.speech_db].get(spec.speech_id).load(), spec.speech_id)
        room = manifests[spec.brir_db]
    except KeyError as exc:
        raise DataError(f"mixture references unknown database {exc}") from None
    n = len(speech)
    early, late = split_brir(room.get(spec.speech_brir).load(), boundary_ms)
    target2 = _spatialize(speech, early)
    late2 = _spatialize(speech, late)
    ext2 = np.zeros_like(target2)
    for src in spec.noises:
        e = room.get(src["brir"])
        if e.room != spec.room:
            raise DataError(f"BRIR {e.item_id} is not in room {spec.room}")
        rec = _mono(manifests[src["db"]].get(src["item"]).load(), src["item"])
        seg = rec[src["offset"]: src["offset"] + n]
        if len(seg) != n:
            raise DataError(f"noise {src['item']} too short at offset {src['offset']}")
        ext2 += _spatialize(seg, e.load())

    def mix(x2):
        return 0.5 * (x2[:, 0] + x2[:, 1])

    target, late_m, ext = mix(target2), mix(late2), mix(ext2)
    a, b, c = (target, late_m, ext) if snr_mode == "downmix" else (target2, late2, ext2)
    gamma, feasible = noise_gain(float(np.sum(a * a)), float(np.sum(b * b)), float(np.sum(b * c)),
                                 float(np.sum(c * c)), spec.snr_db)
    noise_total = late_m + gamma * ext
    y = target + noise_total
    e_t, e_n = float(np.sum(target**2)), float(np.sum(noise_total**2))
    measured = 10 * math.log10(e_t / e_n) if e_n > 0 and e_t > 0 else None
    meta = {
        "gamma": gamma,
        "infeasible": not feasible,
        "snr_requested_db": spec.snr_db,
        "snr_downmix_db": measured,
        "snr_mode": snr_mode,
        "n_samples": n,
        "n_noise_sources": len(spec.noises),
    }
    return Mixture(y, target, noise_total, meta)


def draw_specs(plan: FoldPlan, manifests: dict[str, DatabaseManifest], split: str, seed: int, *,
               hours: float | None = None, n_mixtures: int | None = None) -> list[MixtureSpec]:
    """Mixture specs for ``split`` until ``n_mixtures`` or ``hours`` of audio is reached."""
    if (hours is None) == (n_mixtures is None):
        raise ConfigError("give exactly one of hours or n_mixtures")
    pools = plan.pools(manifests, split)
    pools.check(f"fold {plan.fold_index} {split}")
    specs, total = [], 0.0
    i = 0
    while (n_mixtures is not None and i < n_mixtures) or (hours is not None and total < hours * 3600):
        s = int(substream(seed, "mixture", plan.fold_index, split, i).integers(2**63))
        spec = draw_mixture_spec(pools, s)
        specs.append(spec)
        total += len(manifests[spec.speech_db].get(spec.speech_id).load()) / FS
        i += 1
    return specs


def render_dataset(plan: FoldPlan, manifests: dict[str, DatabaseManifest], split: str, out_dir,
                   seed: int, *, hours: float | None = None, n_mixtures: int | None = None,
                   snr_mode: str = "downmix", workers: int = 1) -> dict:
    """Render a split to ``out_dir`` as WAV triples plus ``index.json``.

    Returns the index. Stored WAVs are float32, so ``y - target - noise``
    holds on disk only to single-precision rounding.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    specs = draw_specs(plan, manifests, split, seed, hours=hours, n_mixtures=n_mixtures)

    def work(item):
        i, spec = item
        mix = render_mixture(spec, manifests, snr_mode)
        mid = f"{split}_{i:05d}"
        files = {k: f"audio/{mid}_{k}.wav" for k in ("mixture", "target", "noise")}
        for key, sig in (("mixture", mix.y), ("target", mix.target), ("noise", mix.noise_total)):
            write_wav(out_dir / files[key], sig)
        return {"id": mid, "condition": split, "files": files, "spec": spec.to_dict(), "metadata": mix.metadata}

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(work, enumerate(specs)))
    index = {
        "format": INDEX_FORMAT,
        "version": 1,
        "split": split,
        "condition": split,
        "seed": seed,
        "sample_rate": FS,
        "snr_mode": snr_mode,
        "reference": "target (direct + early reflections)",
        "fold": plan.to_dict(),
        "total_hours": sum(r["metadata"]["n_samples"] for r in rows) / FS / 3600,
        "mixtures": rows,
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index


def load_index(path) -> dict:
    """Read and sanity-check a dataset ``index.json`` (or its directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "index.json"
    try:
        index = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset index {path}: {exc}") from exc
    if index.get("format") != INDEX_FORMAT or "mixtures" not in index:
        raise DataError(f"{path} is not a dataset index")
    index["_root"] = str(path.parent)
    return index
