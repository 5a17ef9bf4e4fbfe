import json

import numpy as np
import pytest

from diffse.errors import ConfigError, DataError
from diffse.pipeline import (
    compressed_spectrogram,
    content_hash,
    enhance_dataset,
    fit_from_index,
    noise_pair,
    resolve_denoiser,
)
from diffse.sampler import SamplerConfig
from diffse.schedule import ScheduleParams
from diffse.simulate import build_folds, index_manifests, load_index, render_dataset, synth_ensemble
from diffse.spectral import read_wav

SCHED = ScheduleParams()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    ms = synth_ensemble(root / "db", 4, n_speech=5, n_noise=1, n_rooms=1)
    plan = build_folds(ms, 1, 4)[0]
    man = index_manifests(ms)
    render_dataset(plan, man, "train", root / "train", 4, n_mixtures=4)
    render_dataset(plan, man, "matched", root / "test", 4, n_mixtures=3)
    return root, load_index(root / "train"), load_index(root / "test")


def test_noise_pair_identity(data):
    _, _, test = data
    row = test["mixtures"][0]
    mix = read_wav(f"{test['_root']}/{row['files']['mixture']}")
    tgt = read_wav(f"{test['_root']}/{row['files']['target']}")
    n0, y = noise_pair(mix, tgt)
    np.testing.assert_array_equal(y, compressed_spectrogram(mix))
    np.testing.assert_array_equal(y - n0, y - (y - compressed_spectrogram(tgt)))


def test_content_hash(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.write_bytes(b"1")
    b.write_bytes(b"2")
    h = content_hash([a, b])
    assert h == content_hash([b, a])
    b.write_bytes(b"3")
    assert h != content_hash([a, b])


def test_resolve_denoiser_errors(tmp_path):
    with pytest.raises(ConfigError):
        resolve_denoiser("linear")
    with pytest.raises(DataError):
        resolve_denoiser("linear", model_path=str(tmp_path / "none.json"))
    with pytest.raises(ConfigError):
        resolve_denoiser("unet")
    atom = np.ones((2, 2), complex)
    assert resolve_denoiser("oracle")(atom).denoise(atom, atom, 1e-3) == pytest.approx(atom)


def test_fit_records_measured_sigma(data, tmp_path):
    _, train, _ = data
    model = fit_from_index(train, SCHED, 0, n_sigma_bins=8, n_time_samples=4)
    d = model.diagnostics
    assert d["measured_sigma_data"] == pytest.approx(np.sqrt(d["measured_clean_variance"]))
    assert 0.01 < d["measured_sigma_data"] < 1.0
    model.save(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())


@pytest.mark.parametrize("kind,expected", [("edm", 31), ("pc", 32)])
def test_enhance_counts_and_determinism(data, tmp_path, kind, expected):
    _, _, test = data
    cfg = SamplerConfig(kind=kind, n_steps=16)
    rep = enhance_dataset(test, tmp_path / "a", "gaussian", cfg, SCHED, 5, config={"note": 1})
    assert rep["n_ok"] == 3 and rep["expected_evaluations"] == expected
    assert all(m["n_evals"] == expected for m in rep["mixtures"])
    saved = json.loads((tmp_path / "a" / "run.json").read_text())
    assert saved["config"] == {"note": 1} and len(saved["input_hash"]) == 64
    enhance_dataset(test, tmp_path / "b", "gaussian", cfg, SCHED, 5, workers=2)
    for m in test["mixtures"]:
        assert (tmp_path / "a" / f"{m['id']}.wav").read_bytes() == (tmp_path / "b" / f"{m['id']}.wav").read_bytes()


def test_enhance_continues_after_file_error(data, tmp_path):
    root, _, test = data
    broken = json.loads(json.dumps({k: v for k, v in test.items()}))
    broken["mixtures"][1]["files"]["mixture"] = "audio/does_not_exist.wav"
    rep = enhance_dataset(broken, tmp_path / "e", "gaussian", SamplerConfig(n_steps=2), SCHED, 0)
    status = [m["status"] for m in rep["mixtures"]]
    assert status == ["ok", "error", "ok"] and rep["n_failed"] == 1
    assert "DataError" in rep["mixtures"][1]["error"]


def test_oracle_enhancement_recovers_target(data, tmp_path):
    _, _, test = data
    enhance_dataset(test, tmp_path / "o", "oracle", SamplerConfig(n_steps=8), SCHED, 0)
    row = test["mixtures"][0]
    tgt = read_wav(f"{test['_root']}/{row['files']['target']}")
    out = read_wav(tmp_path / "o" / f"{row['id']}.wav")
    inner = slice(512, -512)
    err = np.sum((out - tgt)[inner] ** 2) / np.sum(tgt[inner] ** 2)
    assert err < 1e-6
