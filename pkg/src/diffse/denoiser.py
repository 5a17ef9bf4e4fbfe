"""Denoiser models, preconditioning and the weighted denoising loss.

A denoiser maps a scale-normalised noisy state ``x = n_t / s(t)`` (plus the
conditioning mixture ``y``) to an estimate of the clean environmental noise
``n0``. Models are addressed by noise level ``sigma`` rather than by time.

Shipped models:

* :class:`OracleDenoiser`: exact posterior mean for an empirical prior.
* :class:`GaussianDenoiser`: posterior mean for a ``CN(0, sigma_prior^2 I)`` prior.
* :class:`LinearDenoiser`: per-sigma-bin least-squares map ``a x + b y``.
* :class:`PreconditionedDenoiser`: wraps a raw network-style callable.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import softmax

from .diffusion import check_same_shape, sample_complex_gaussian
from .errors import ConfigError, DataError, DimensionError, DomainError
from .schedule import ScheduleParams, eval_point, sigma_at, sigma_max

__all__ = [
    "Preconditioning",
    "PrecondCoeffs",
    "precondition_coeffs",
    "DenoiserModel",
    "OracleDenoiser",
    "GaussianDenoiser",
    "LinearDenoiser",
    "PreconditionedDenoiser",
    "oracle_denoise",
    "gaussian_denoise",
    "empirical_loss",
    "fit_linear_denoiser",
    "load_denoiser",
]


class PrecondCoeffs(NamedTuple):
    c_skip: float
    c_out: float
    c_in: float
    c_noise: float
    weight: float


@dataclass(frozen=True)
class Preconditioning:
    sigma_data: float = 0.1

    def coeffs(self, sigma: float) -> PrecondCoeffs:
        return precondition_coeffs(self, sigma)

    def weight(self, sigma):
        """Loss weight ``(sigma^2 + sd^2) / (sigma sd)^2``; accepts arrays."""
        sd2 = self.sigma_data**2
        sigma = np.asarray(sigma, dtype=float)
        return (sigma**2 + sd2) / (sigma**2 * sd2)


def precondition_coeffs(pre: Preconditioning, sigma: float) -> PrecondCoeffs:
    if not sigma > 0:
        raise DomainError(f"preconditioning needs sigma > 0, got {sigma}")
    sd = pre.sigma_data
    total = sigma * sigma + sd * sd
    return PrecondCoeffs(
        c_skip=sd * sd / total,
        c_out=sigma * sd / math.sqrt(total),
        c_in=1.0 / math.sqrt(total),
        c_noise=0.25 * math.log(sigma),
        weight=total / (sigma * sd) ** 2,
    )


class DenoiserModel(ABC):
    """Estimator of ``n0`` from ``(x_scaled, y, sigma)``.

    Implementations must be immutable after construction so that concurrent
    sampler runs can share one instance.
    """

    name: str = "denoiser"

    @abstractmethod
    def denoise(self, x_scaled: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
        ...

    def denoise_batch(self, x_scaled: np.ndarray, y: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
        """Evaluate on a leading batch axis; ``sigmas`` has one entry per item."""
        return np.stack([self.denoise(x, yy, float(s)) for x, yy, s in zip(x_scaled, y, sigmas)])

    def __call__(self, x_scaled, y, sigma):
        return self.denoise(x_scaled, y, sigma)


# --------------------------------------------------------------------------
# analytic models


def oracle_denoise(atoms, x_scaled: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior mean of ``n0`` when ``n0`` is uniform over ``atoms``.

    ``x_scaled = n0 + sigma * eps`` with ``eps`` standard circular complex
    Gaussian, so the posterior weights are ``softmax(-|x - a_j|^2 / sigma^2)``.
    """
    atoms = np.asarray(atoms, dtype=np.complex128)
    x_scaled = np.asarray(x_scaled, dtype=np.complex128)
    if atoms.ndim < 1 or len(atoms) == 0:
        raise DomainError("oracle needs at least one atom")
    if atoms.shape[1:] != x_scaled.shape:
        raise DimensionError(f"atom shape {atoms.shape[1:]} != input shape {x_scaled.shape}")
    if not sigma > 0:
        return x_scaled.copy()
    diff = x_scaled[None] - atoms
    dist2 = np.sum(diff.real**2 + diff.imag**2, axis=tuple(range(1, atoms.ndim)))
    # complex circular noise of total variance sigma^2 has density exp(-|z|^2 / sigma^2)
    w = softmax(-dist2 / sigma**2)
    return np.tensordot(w, atoms, axes=(0, 0))


def gaussian_denoise(sigma_prior: float, x_scaled: np.ndarray, sigma: float) -> np.ndarray:
    """Linear shrinkage ``x * sp^2 / (sp^2 + sigma^2)``."""
    if not sigma_prior > 0:
        raise DomainError("sigma_prior must be positive")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    sp2 = sigma_prior**2
    return np.asarray(x_scaled) * (sp2 / (sp2 + sigma**2))


class OracleDenoiser(DenoiserModel):
    def __init__(self, atoms: Sequence[np.ndarray], name: str = "oracle"):
        atoms = np.asarray(atoms, dtype=np.complex128)
        if atoms.ndim < 2 or len(atoms) == 0:
            raise DomainError("oracle needs a non-empty stack of atoms")
        self.atoms = atoms
        self.atoms.setflags(write=False)
        self.name = name

    def denoise(self, x_scaled, y, sigma):
        return oracle_denoise(self.atoms, x_scaled, sigma)

    def denoise_batch(self, x_scaled, y, sigmas):
        x_scaled = np.asarray(x_scaled, dtype=np.complex128)
        if x_scaled.shape[1:] != self.atoms.shape[1:]:
            raise DimensionError("batch items do not match atom shape")
        sigmas = np.asarray(sigmas, dtype=float)
        out = np.array(x_scaled, copy=True)
        live = sigmas > 0
        if np.any(live):
            feat_axes = tuple(range(2, x_scaled.ndim + 1))
            diff = x_scaled[live][:, None] - self.atoms[None]
            dist2 = np.sum(diff.real**2 + diff.imag**2, axis=feat_axes)
            w = softmax(-dist2 / sigmas[live, None] ** 2, axis=1)
            out[live] = np.tensordot(w, self.atoms, axes=(1, 0))
        return out


class GaussianDenoiser(DenoiserModel):
    def __init__(self, sigma_prior: float = 0.1):
        if not sigma_prior > 0:
            raise DomainError("sigma_prior must be positive")
        self.sigma_prior = float(sigma_prior)
        self.name = f"gaussian(sigma_prior={self.sigma_prior:g})"

    def denoise(self, x_scaled, y, sigma):
        return gaussian_denoise(self.sigma_prior, x_scaled, sigma)

    def denoise_batch(self, x_scaled, y, sigmas):
        sp2 = self.sigma_prior**2
        gain = sp2 / (sp2 + np.asarray(sigmas, dtype=float) ** 2)
        return np.asarray(x_scaled) * gain.reshape((-1,) + (1,) * (np.ndim(x_scaled) - 1))


class PreconditionedDenoiser(DenoiserModel):
    """``D = c_skip x + c_out F(c_in x, y, c_noise)`` around a raw model ``F``."""

    def __init__(self, raw: Callable, pre: Preconditioning = Preconditioning(), name: str = "preconditioned"):
        self.raw = raw
        self.pre = pre
        self.name = name

    def denoise(self, x_scaled, y, sigma):
        if sigma <= 0:
            return np.array(x_scaled, dtype=np.complex128, copy=True)
        c = self.pre.coeffs(sigma)
        return c.c_skip * x_scaled + c.c_out * self.raw(c.c_in * x_scaled, y, c.c_noise)


# --------------------------------------------------------------------------
# linear model


class LinearDenoiser(DenoiserModel):
    """Piecewise-constant (over sigma bins) linear map ``D = a x + b y``.

    ``a`` and ``b`` have shape ``(n_bins, F)`` where ``F`` is 1 (shared across
    frequency) or the number of frequency rows. Below the first bin edge the
    model is the identity, which is the exact zero-noise limit.
    """

    def __init__(self, edges, a, b, sigma_data: float = 0.1, name: str = "linear", diagnostics=None):
        self.edges = np.asarray(edges, dtype=float)
        self.a = np.asarray(a, dtype=np.complex128)
        self.b = np.asarray(b, dtype=np.complex128)
        if self.a.ndim == 1:
            self.a = self.a[:, None]
            self.b = self.b[:, None]
        n_bins = len(self.edges) - 1
        if n_bins < 1 or self.a.shape != self.b.shape or self.a.shape[0] != n_bins:
            raise DimensionError("edges/coefficient shapes inconsistent")
        if np.any(np.diff(self.edges) <= 0):
            raise DomainError("bin edges must be strictly increasing")
        self.sigma_data = float(sigma_data)
        self.name = name
        self.diagnostics = dict(diagnostics or {})
        for arr in (self.edges, self.a, self.b):
            arr.setflags(write=False)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    def bin_index(self, sigma) -> np.ndarray:
        """Bin of each sigma; -1 marks the identity region below the first edge."""
        sigma = np.asarray(sigma, dtype=float)
        idx = np.searchsorted(self.edges, sigma, side="right") - 1
        idx = np.minimum(idx, self.n_bins - 1)
        return np.where(sigma < self.edges[0], -1, idx)

    def coefficients(self, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        """Effective ``(a, b)`` at ``sigma``, each of shape ``(F,)``."""
        i = int(self.bin_index(sigma))
        if i < 0:
            return np.ones(self.a.shape[1], complex), np.zeros(self.a.shape[1], complex)
        return self.a[i], self.b[i]

    def _check(self, x_scaled, y):
        check_same_shape(x_scaled, y)
        f = self.a.shape[1]
        if f != 1 and np.shape(x_scaled)[-2] != f:
            raise DimensionError(f"model has {f} frequency rows, input has {np.shape(x_scaled)[-2]}")

    def denoise(self, x_scaled, y, sigma):
        self._check(x_scaled, y)
        a, b = self.coefficients(sigma)
        return a[:, None] * x_scaled + b[:, None] * y

    def denoise_batch(self, x_scaled, y, sigmas):
        self._check(x_scaled, y)
        idx = self.bin_index(sigmas)
        ones = np.ones((1, self.a.shape[1]), complex)
        a = np.concatenate([self.a, ones])[idx]  # idx = -1 picks the identity row
        b = np.concatenate([self.b, 0 * ones])[idx]
        return a[:, :, None] * x_scaled + b[:, :, None] * y

    # serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "diffse-linear-denoiser",
            "version": 1,
            "name": self.name,
            "sigma_data": self.sigma_data,
            "edges": self.edges.tolist(),
            "a": [[[z.real, z.imag] for z in row] for row in self.a],
            "b": [[[z.real, z.imag] for z in row] for row in self.b],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearDenoiser":
        if d.get("format") != "diffse-linear-denoiser":
            raise DataError("not a linear denoiser model file")

        def cplx(rows):
            arr = np.asarray(rows, dtype=float)
            return arr[..., 0] + 1j * arr[..., 1]

        return cls(d["edges"], cplx(d["a"]), cplx(d["b"]), d["sigma_data"], d.get("name", "linear"),
                   d.get("diagnostics"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "LinearDenoiser":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise DataError(f"cannot load model {path}: {e}") from e


def load_denoiser(path) -> LinearDenoiser:
    return LinearDenoiser.load(path)


# --------------------------------------------------------------------------
# loss and fitting


def _draw_training_batch(n0, schedule: ScheduleParams, n_time: int, rng):
    """Draw ``n_time`` times and the matching scale-normalised states ``n_t / s``."""
    ts = rng.uniform(schedule.t_eps, schedule.t_end, size=n_time)
    sigmas = sigma_at(schedule, ts)
    # n_t / s = n0 + sigma * eps for n_t drawn from the forward kernel
    eps = sample_complex_gaussian((n_time,) + n0.shape, 1.0, rng)
    xs = n0 + sigmas.reshape((-1,) + (1,) * n0.ndim) * eps
    return sigmas, xs


def empirical_loss(model: DenoiserModel, dataset, schedule: ScheduleParams, n_time_samples: int,
                   rng: np.random.Generator, pre: Preconditioning = Preconditioning()) -> float:
    """Monte-Carlo estimate of ``E[w(sigma) |D(n_t/s, y, sigma) - n0|^2]``.

    ``t ~ U(t_eps, t_end)`` and ``n_t`` is drawn from the forward kernel. The
    estimate is a deterministic function of the generator state.
    """
    if len(dataset) == 0:
        raise ConfigError("empirical_loss needs a non-empty dataset")
    if n_time_samples < 1:
        raise ConfigError("n_time_samples must be >= 1")
    total = 0.0
    count = 0
    for n0, y in dataset:
        n0 = np.asarray(n0, dtype=np.complex128)
        y = np.asarray(y, dtype=np.complex128)
        check_same_shape(n0, y)
        sigmas, xs = _draw_training_batch(n0, schedule, n_time_samples, rng)
        ys = np.broadcast_to(y, xs.shape)
        err = model.denoise_batch(xs, ys, sigmas) - n0
        sq = np.sum(err.real**2 + err.imag**2, axis=tuple(range(1, err.ndim)))
        total += float(np.sum(pre.weight(sigmas) * sq))
        count += n_time_samples
    return total / count


def fit_linear_denoiser(dataset, schedule: ScheduleParams, n_sigma_bins: int = 32,
                        rng: np.random.Generator | None = None, *, n_time_samples: int = 16,
                        per_frequency: bool = False, pre: Preconditioning = Preconditioning(),
                        name: str = "linear") -> LinearDenoiser:
    """Least-squares fit of ``D = a(sigma) x + b(sigma) y`` per log-spaced sigma bin.

    Each bin minimises the weighted denoising loss restricted to the samples
    that fall into it. Bins whose normal equations are singular fall back to
    ``b = 0`` with the scalar Wiener gain for ``a``; empty bins copy the
    nearest populated bin. Both events are listed in ``model.diagnostics``.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot fit on an empty dataset")
    if n_sigma_bins < 1:
        raise ConfigError("n_sigma_bins must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng

    lo = eval_point(schedule, schedule.t_eps).sigma
    hi = sigma_max(schedule)
    edges = np.geomspace(lo, hi, n_sigma_bins + 1)
    n_freq = np.shape(dataset[0][0])[0] if per_frequency else 1
    # weighted normal-equation sums per bin: |x|^2, conj(x) y, |y|^2, conj(x) n0, conj(y) n0
    sxx, syy = (np.zeros((n_sigma_bins, n_freq)) for _ in range(2))
    sxy, sxn, syn = (np.zeros((n_sigma_bins, n_freq), complex) for _ in range(3))
    count = np.zeros(n_sigma_bins, dtype=np.int64)
    sum_axes = (-1,) if per_frequency else (-2, -1)

    for n0, y in dataset:
        n0 = np.asarray(n0, dtype=np.complex128)
        y = np.asarray(y, dtype=np.complex128)
        check_same_shape(n0, y)
        if per_frequency and n0.shape[0] != n_freq:
            raise DimensionError("per-frequency fit needs a common number of frequency rows")
        sigmas, xs = _draw_training_batch(n0, schedule, n_time_samples, rng)
        bins = np.clip(np.searchsorted(edges, sigmas, side="right") - 1, 0, n_sigma_bins - 1)
        w = pre.weight(sigmas)
        for k, x, wk in zip(bins, xs, w):
            xc = np.conj(x)
            sxx[k] += wk * np.sum(np.abs(x) ** 2, axis=sum_axes).reshape(-1)
            sxy[k] += wk * np.sum(xc * y, axis=sum_axes).reshape(-1)
            syy[k] += wk * np.sum(np.abs(y) ** 2, axis=sum_axes).reshape(-1)
            sxn[k] += wk * np.sum(xc * n0, axis=sum_axes).reshape(-1)
            syn[k] += wk * np.sum(np.conj(y) * n0, axis=sum_axes).reshape(-1)
            count[k] += 1

    a = np.zeros((n_sigma_bins, n_freq), complex)
    b = np.zeros((n_sigma_bins, n_freq), complex)
    fallback = []
    for k in np.flatnonzero(count):
        det = sxx[k] * syy[k] - np.abs(sxy[k]) ** 2
        ok = det > 1e-10 * sxx[k] * syy[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            a_k = (syy[k] * sxn[k] - sxy[k] * syn[k]) / det
            b_k = (sxx[k] * syn[k] - np.conj(sxy[k]) * sxn[k]) / det
            wiener = np.where(sxx[k] > 0, sxn[k] / np.where(sxx[k] > 0, sxx[k], 1.0), 1.0)
        a[k] = np.where(ok, a_k, wiener)
        b[k] = np.where(ok, b_k, 0.0)
        if not np.all(ok):
            fallback.append(int(k))

    populated = np.flatnonzero(count)
    if len(populated) == 0:
        raise ConfigError("no training samples fell into any sigma bin")
    empty = [int(k) for k in range(n_sigma_bins) if count[k] == 0]
    for k in empty:
        src = populated[np.argmin(np.abs(populated - k))]
        a[k], b[k] = a[src], b[src]

    diagnostics = {
        "n_pairs": len(dataset),
        "n_time_samples": n_time_samples,
        "per_frequency": per_frequency,
        "samples_per_bin": count.tolist(),
        "singular_fallback_bins": fallback,
        "empty_bins_filled": empty,
    }
    return LinearDenoiser(edges, a, b, pre.sigma_data, name=name, diagnostics=diagnostics)
