"""Conditioned diffusion-based speech enhancement at desk scale."""

from .denoiser import GaussianDenoiser, LinearDenoiser, OracleDenoiser, Preconditioning
from .errors import ConfigError, DataError, DimensionError, DomainError
from .sampler import SamplerConfig, edm_sample, enhance, pc_sample, sample
from .schedule import ScheduleParams, eval_point
from .spectral import StftConfig, compress, decompress, istft, stft

__version__ = "0.1.0"

SCOPE_NOTE = (
    "Absolute PESQ, ESTOI and SNR improvements of the original neural system are not reproducible "
    "with this package. They depend on licensed speech, noise and room-response corpora and on a "
    "network trained on GPUs. The acceptance suite replaces them with oracle-based and invariant "
    "checks that run at desk scale."
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "DomainError",
    "GaussianDenoiser",
    "LinearDenoiser",
    "OracleDenoiser",
    "Preconditioning",
    "SamplerConfig",
    "SCOPE_NOTE",
    "ScheduleParams",
    "StftConfig",
    "compress",
    "decompress",
    "edm_sample",
    "enhance",
    "eval_point",
    "istft",
    "pc_sample",
    "sample",
    "stft",
]
