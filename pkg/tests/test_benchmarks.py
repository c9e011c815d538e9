import json
import math

import numpy as np
import pytest

from cavityrc.benchmarks import (
    BenchmarkReport,
    CorpusError,
    SincSettings,
    SincTask,
    VowelSettings,
    calibrate_gain,
    cavity_layout,
    confusion_matrix,
    gate,
    ingest_vowel_corpus,
    normalized_xcorr,
    precision_recall,
    room_layout,
    run_memory_probe,
    run_sinc_sweep,
    run_vowel_benchmark,
    sinc,
    synthetic_dataset,
    vowel_spectra,
)
from cavityrc.benchmarks.memory import envelope_decay, onset_time, ricker
from cavityrc.benchmarks.sinc import harmonic_selector, sinc_drive
from cavityrc.encoding import make_mask

# ------------------------------------------------------------------- corpus


@pytest.fixture(scope="module")
def synth():
    return synthetic_dataset(seed=0, split_seed=0)


def test_synthetic_corpus_is_balanced_and_speaker_disjoint(synth):
    assert synth.synthetic
    assert synth.class_counts() == {"ah": 93, "aw": 93, "uh": 93}
    tr = {synth.samples[i].speaker for i in synth.train_idx}
    te = {synth.samples[i].speaker for i in synth.test_idx}
    assert not tr & te
    assert len(synth.train_idx) + len(synth.test_idx) == 279
    assert 0.25 < len(te) / len(tr | te) < 0.35


def test_split_is_seeded(synth):
    a, b = synth.with_split(4), synth.with_split(4)
    assert np.array_equal(a.test_idx, b.test_idx)
    assert not np.array_equal(synth.with_split(5).test_idx, a.test_idx)


def test_missing_corpus_is_a_clear_error(tmp_path, monkeypatch):
    monkeypatch.delenv("CAVITYRC_CORPUS", raising=False)
    with pytest.raises(CorpusError, match="manifest.csv"):
        ingest_vowel_corpus(tmp_path)
    with pytest.raises(CorpusError):
        ingest_vowel_corpus(None)


def test_corpus_ingestion(tmp_path):
    from scipy.io import wavfile

    rng = np.random.default_rng(0)
    rows = ["filename,class,speaker,sex"]
    for spk in range(10):
        for v in ("ah", "aw", "uh", "ee"):
            name = f"{spk}_{v}.wav"
            wavfile.write(tmp_path / name, 16000, (rng.standard_normal(800) * 3000).astype(np.int16))
            rows.append(f"{name},{v},spk{spk},{'m' if spk % 2 else 'f'}")
    (tmp_path / "manifest.csv").write_text("\n".join(rows) + "\n")
    ds = ingest_vowel_corpus(tmp_path, split_seed=1)
    assert not ds.synthetic
    assert ds.class_counts() == {"ah": 10, "aw": 10, "uh": 10}
    (tmp_path / "manifest.csv").write_text("\n".join(rows + ["gone.wav,ah,x,m"]) + "\n")
    with pytest.raises(CorpusError, match="gone.wav"):
        ingest_vowel_corpus(tmp_path)


# ------------------------------------------------------------------- report


def test_confusion_and_marginals():
    cm = confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    p, r = precision_recall(cm)
    assert np.allclose(p, [0.5, 2 / 3, 1.0]) and np.allclose(r, [0.5, 1.0, 0.5])
    rep = BenchmarkReport("t", "h", {"x": 1}, ["a", "b", "c"], cm)
    assert rep.accuracy == pytest.approx(4 / 6)
    assert sum(v["support"] for v in rep.per_class().values()) == 6


def test_report_json_is_stable_and_excludes_runtime(tmp_path):
    g = {"acc": gate(0.7, 0.6, ">=")}
    a = BenchmarkReport("t", "h", {"v": np.float64(math.inf)}, gates=g, runtime_s=1.0)
    b = BenchmarkReport("t", "h", {"v": np.float64(math.inf)}, gates=g, runtime_s=99.0)
    a.to_json(tmp_path / "a.json")
    b.to_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    d = json.loads((tmp_path / "a.json").read_text())
    assert d["passed"] and d["metrics"]["v"] == "inf" and "runtime_s" not in d
    assert not gate(1.0, 1.0, "<")["passed"]
    with pytest.raises(ValueError):
        BenchmarkReport("t", "h", {}, ["a"], np.zeros((2, 2)))


# ------------------------------------------------------------------- layout


def test_cavity_layout_defaults():
    lay = cavity_layout(seed=3)
    assert lay.cavity.shape == (100, 200)
    assert len(lay.source_cells) == 10 and all(c[1] == 2 for c in lay.source_cells)
    assert [p.label for p in lay.probes] == [f"s{k}" for k in range(10)]
    assert all(s.position[1] >= 40 for s in lay.scatterers)
    assert all(lay.cavity.c_map[s.position] == 343.0 for s in lay.scatterers)
    assert lay.info["inclusions"] > 0
    assert cavity_layout(seed=3).scatterers == lay.scatterers
    lin = lay.linear()
    assert not any(s.enabled for s in lin.scatterers)
    assert all(s.gain_gnl == 0.25 for s in lay.with_control(gain=0.25).scatterers)


def test_room_layout_is_flagged_invented():
    room = room_layout(dx=0.05)
    assert room.invented_geometry and len(room.source_cells) == 1
    assert np.max(room.cavity.damping_map) > np.min(room.cavity.damping_map)


# --------------------------------------------------------------------- sinc


def tiny_layout(**kw):
    args = dict(width_m=0.6, height_m=0.4, dx=0.02, sample_rate_hz=8000.0, n_sources=4, n_scatterers=3,
                n_inclusions=0, seed=1)
    args.update(kw)
    return cavity_layout(**args)


def test_sinc_target():
    assert sinc(0.0) == 1.0
    assert sinc(np.pi) == pytest.approx(0.0, abs=1e-15)
    assert sinc(1.0) == pytest.approx(math.sin(1.0))


def test_sinc_task_draw_is_seeded_and_disjoint():
    a, b = SincTask(seed=2).draw()
    assert len(a) == 100 and len(b) == 50 and not set(a) & set(b)
    assert np.all(np.abs(np.concatenate([a, b])) <= math.pi)
    assert np.array_equal(SincTask(seed=2).draw()[0], a)


def test_harmonic_selector_and_drive():
    mask = make_mask(4, 10, seed=0)
    sel = harmonic_selector(mask, 8000.0, SincSettings())
    assert np.allclose(sel.bin_hz, 2 * mask.omega_hz)
    assert sel.window_start_s == pytest.approx(0.3) and sel.taper == "hann"
    lay = tiny_layout()
    src = sinc_drive(lay, mask, 1.0, SincSettings())
    assert len(src) == 4 and src[0].waveform[0] == 0.0


@pytest.fixture(scope="module")
def tiny_sweep():
    lay = tiny_layout()
    mask = make_mask(4, 10, seed=0)
    settings = SincSettings()
    edge = [sinc_drive(lay.with_control(exponent=1.5), mask, z, settings) for z in (-math.pi, math.pi)]
    cal = calibrate_gain(lay.with_control(exponent=1.5), edge, settings.duration_s, 0.5, bisections=4)
    return lay, mask, settings, cal


def test_constant_target_is_fitted_exactly(tiny_sweep):
    lay, mask, settings, cal = tiny_sweep
    task = SincTask(seed=0, target=lambda z: np.full(np.shape(z), 0.7))
    sweep = run_sinc_sweep(lay, mask, task, [1.5], settings, gains=[cal.gain])
    assert sweep.points[0].test_rmse < 1e-6 and sweep.linear.test_rmse < 1e-6


def test_nonlinear_control_beats_linear_on_sinc(tiny_sweep):
    lay, mask, settings, cal = tiny_sweep
    assert 0 < cal.gain < cal.bound
    sweep = run_sinc_sweep(lay, mask, SincTask(seed=0), [1.5], settings, gains=[cal.gain])
    assert sweep.linear.test_rmse >= 0.2  # no second harmonic without control
    assert sweep.direct_linear_rmse >= 0.2  # sinc is even, so no affine fit helps
    assert sweep.points[0].test_rmse < 0.5 * sweep.linear.test_rmse


def test_sweep_validation(tiny_sweep):
    lay, mask, settings, _ = tiny_sweep
    with pytest.raises(ValueError, match=r"\[1, 2\]"):
        run_sinc_sweep(lay, mask, SincTask(), [2.5], settings)
    with pytest.raises(ValueError, match="100"):
        run_sinc_sweep(lay, mask, SincTask(n_train=50), [1.5], settings)


def test_unstable_exponent_is_flagged_not_fatal(tiny_sweep):
    lay, mask, settings, _ = tiny_sweep
    sweep = run_sinc_sweep(lay, mask, SincTask(seed=0), [1.5, 1.5], settings, gains=[1e9, 0.0])
    assert sweep.points[0].unstable and not sweep.points[1].unstable
    assert sweep.best() is sweep.points[1]
    assert not sweep.has_interior_minimum()


# ------------------------------------------------------------------- memory


def test_ricker_has_zero_mean_and_zero_crossings():
    w = ricker(1e-3, 1e5)
    # zero mean up to the truncated tails at +-4 sigma
    assert abs(w.sum()) < 2e-3 * np.abs(w).sum()
    zeros = np.flatnonzero(np.abs(w) < 1e-12)
    assert zeros.tolist() == [150, 250]  # centre 200 +- width/2


def test_envelope_decay_and_onset_oracles():
    rate = 8000.0
    t = np.arange(8000) / rate
    x = np.exp(-3.0 * t) * np.sin(2 * np.pi * 300 * t)
    assert envelope_decay(x, rate, 0.1) == pytest.approx(3.0, rel=0.02)
    y = np.zeros(100)
    y[40:] = 1.0
    y[39] = 0.25
    assert onset_time(y, 100.0) == pytest.approx((39 + 0.25 / 0.75) / 100.0)
    assert math.isnan(onset_time(np.zeros(10), 100.0))


def test_normalized_xcorr():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(500)
    m = normalized_xcorr([a, np.roll(np.pad(a, (0, 50)), 20)[:500] * 3, rng.standard_normal(500)])
    assert m[0, 0] == 1.0 and m[0, 1] > 0.9 and m[0, 2] < 0.3


def mem_layout(damping):
    return cavity_layout(1.0, 0.5, 0.01, damping=damping, n_sources=1, n_scatterers=4, n_inclusions=0, seed=2)


def test_memory_probe_recovers_uniform_damping():
    res = run_memory_probe(mem_layout(10.0), duration_s=0.6)
    assert res.theoretical_rate == 5.0
    for r in res.responses:
        assert r.decay_rate == pytest.approx(5.0, rel=0.2)
        assert not r.non_decaying
        assert abs(r.onset_delay_s * 343 - r.distance_m) <= 0.02
    assert res.max_xcorr < 0.99


def test_memory_probe_lossless_is_non_decaying():
    res = run_memory_probe(mem_layout(0.0), duration_s=0.3)
    assert res.theoretical_rate == 0.0
    assert all(r.non_decaying for r in res.responses)


def test_memory_probe_rejects_short_pulse():
    with pytest.raises(ValueError, match="2 dt"):
        run_memory_probe(mem_layout(1.0), pulse_width_s=1e-6)


# -------------------------------------------------------------------- vowel


@pytest.fixture(scope="module")
def digital(synth):
    return vowel_spectra(None, synth.samples, "digital", VowelSettings())


def test_digital_vowel_baseline(synth, digital):
    rep, model, _ = run_vowel_benchmark(None, synth, "digital", spectra=digital)
    assert model.n_parameters <= 200
    assert rep.metrics["parameters"] == 3 * 65 + 3
    assert 0.55 <= rep.accuracy <= 0.9
    assert rep.synthetic and rep.confusion.sum() == len(synth.test_idx)


def test_shuffled_labels_fall_to_chance(synth, digital):
    rep, _, _ = run_vowel_benchmark(None, synth, "digital", spectra=digital, shuffle_labels=True)
    assert abs(rep.accuracy - 1 / 3) <= 0.12


def test_vowel_mode_errors(synth, digital):
    with pytest.raises(ValueError, match="unknown mode"):
        vowel_spectra(None, synth.samples[:2], "quantum", VowelSettings())
    with pytest.raises(ValueError, match="needs a layout"):
        vowel_spectra(None, synth.samples[:2], "linear", VowelSettings())
    with pytest.raises(ValueError, match="longer"):
        vowel_spectra(None, synth.samples[:2], "digital", VowelSettings(duration_s=0.1))
    with pytest.raises(ValueError, match="computed for mode"):
        run_vowel_benchmark(None, synth, "linear", spectra=digital)


def test_nonlinear_gain_backs_off_after_divergence(synth, monkeypatch):
    from cavityrc.benchmarks import vowel as vowel_mod
    from cavityrc.wavefield import InstabilityError

    lay = tiny_layout()
    monkeypatch.setattr(vowel_mod, "calibrate_vowel_gain", lambda *a: 1e4)
    settings = VowelSettings(duration_s=0.05, window_len=256, gain_backoff=0.01, max_backoffs=3)
    two = synth.samples[:2]
    sp = vowel_spectra(lay, two, "nonlinear", settings)
    assert sp.info["backoffs"] >= 1
    assert sp.gain == pytest.approx(1e4 * 0.01 ** sp.info["backoffs"])
    assert np.all(np.isfinite(sp.magnitudes))
    with pytest.raises(InstabilityError, match="sample 0"):
        vowel_spectra(lay, two, "nonlinear", settings, gain=1e4)
    with pytest.raises(InstabilityError):
        vowel_spectra(lay, two, "nonlinear", VowelSettings(duration_s=0.05, window_len=256, max_backoffs=0))
