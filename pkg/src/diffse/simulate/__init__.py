"""Dataset simulation: manifests, synthetic databases, folds and mixtures."""

from .folds import FoldPlan, Pools, build_folds, select_fold
from .manifest import DatabaseManifest, Entry, index_manifests, read_manifest, write_manifest
from .mixture import (
    Mixture,
    MixtureSpec,
    draw_mixture_spec,
    draw_specs,
    load_index,
    noise_gain,
    render_dataset,
    render_mixture,
    split_brir,
)
from .synth import synth_brir, synth_database, synth_ensemble, synth_noise, synth_speech

__all__ = [
    "DatabaseManifest",
    "Entry",
    "FoldPlan",
    "Mixture",
    "MixtureSpec",
    "Pools",
    "build_folds",
    "draw_mixture_spec",
    "draw_specs",
    "index_manifests",
    "load_index",
    "noise_gain",
    "read_manifest",
    "render_dataset",
    "render_mixture",
    "select_fold",
    "split_brir",
    "synth_brir",
    "synth_database",
    "synth_ensemble",
    "synth_noise",
    "synth_speech",
    "write_manifest",
]
