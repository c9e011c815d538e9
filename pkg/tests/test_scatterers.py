import math

import numpy as np
import pytest

from cavityrc.scatterers import (
    HarmonicPhasors,
    ScattererSpec,
    driven_record,
    feedback,
    kernel_arrays,
    max_stable_gain,
    sine_drive,
    stroboscopic_analysis,
)
from cavityrc.wavefield import CavitySpec, ProbeRecord, ProbeSpec, SourceSpec, derive_timestep, run


def test_feedback_laws():
    odd = ScattererSpec((1, 1), 1.5, 2.0, symmetry="odd")
    even = ScattererSpec((1, 1), 1.5, 2.0, symmetry="even")
    p = np.array([-4.0, 0.0, 4.0])
    assert np.allclose(feedback(p, odd), [-16.0, 0.0, 16.0])
    assert np.allclose(feedback(p, even), [16.0, 0.0, 16.0])
    off = ScattererSpec((1, 1), enabled=False, linear_load=0.5)
    assert feedback(2.0, off) == -1.0
    assert feedback(3.0, ScattererSpec((1, 1), 2.0, 0.0)) == 0.0


def test_exponent_one_is_linear_for_odd_law():
    s = ScattererSpec((1, 1), 1.0, 0.7, symmetry="odd")
    x = np.linspace(-3, 3, 11)
    assert np.allclose(feedback(x, s), 0.7 * x)


@pytest.mark.parametrize(
    "kw",
    [{"exponent_n": 0.5}, {"exponent_n": 3.5}, {"gain_gnl": -1.0}, {"gain_gnl": math.inf},
     {"linear_load": -0.1}, {"symmetry": "both"}, {"coupling": "magnetic"}],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ScattererSpec((1, 1), **kw)


def test_kernel_arrays_encode_disabled_as_linear_load():
    cav = CavitySpec(0.2, 0.2, 0.01)
    dt = derive_timestep(cav)
    cells, kind, gain, expo, coef, vel = kernel_arrays(
        [ScattererSpec((2, 3), 1.5, 0.4, symmetry="even"), ScattererSpec((5, 5), enabled=False, linear_load=0.2,
                                                                          coupling="pressure")], cav, dt)
    assert cells.tolist() == [[2, 3], [5, 5]]
    assert gain.tolist() == [0.4, 0.2] and expo.tolist() == [1.5, 1.0]
    nu = 343 * dt / 0.01
    assert coef[0] == pytest.approx(nu) and coef[1] == pytest.approx(nu**2)
    assert vel.tolist() == [True, False]


def test_passive_load_damps_the_field():
    cav = CavitySpec(0.3, 0.3, 0.01)
    src = [SourceSpec((5, 5), np.hanning(20) * 1e7)]
    probe = [ProbeSpec((20, 20), "p")]
    free = run(cav, src, probe, duration_s=0.1)[0].samples
    loaded = run(cav, src, probe, [ScattererSpec((15, 15), enabled=False, linear_load=2.0)], duration_s=0.1)[0].samples
    n = len(free) // 2
    assert np.sqrt(np.mean(loaded[n:] ** 2)) < np.sqrt(np.mean(free[n:] ** 2))


def test_sine_drive_ramp():
    w = sine_drive(2.0, 100.0, 1.0, 8000.0, ramp_s=0.1)
    assert w[0] == 0.0
    assert np.max(np.abs(w[:80])) < 0.3
    assert np.max(np.abs(w[2000:])) == pytest.approx(2.0, rel=1e-3)


def _tone_record(amps, phases, f0=500.0, fs=16000.0, n=16000):
    t = np.arange(n) / fs
    x = sum(a * np.cos(2 * np.pi * (m + 1) * f0 * t + ph) for m, (a, ph) in enumerate(zip(amps, phases)))
    return ProbeRecord("x", x, fs)


def test_stroboscopic_analysis_recovers_known_harmonics():
    amps = [2.0, 0.5, 0.1, 0.0, 0.02]
    phases = [0.3, -1.0, 2.0, 0.0, 0.5]
    ph = stroboscopic_analysis(_tone_record(amps, phases), 500.0, 5)
    rel = np.array(amps) / 2.0
    assert np.allclose(np.abs(ph.phasors), rel, atol=1e-9)
    assert np.angle(ph.phasors[1]) == pytest.approx(-1.0, abs=1e-9)
    assert ph.magnitudes_db[1] == pytest.approx(20 * np.log10(0.25), abs=1e-6)


def test_stroboscopic_errors():
    rec = _tone_record([1.0], [0.0])
    with pytest.raises(ValueError, match="Nyquist"):
        stroboscopic_analysis(rec, 500.0, 16)
    with pytest.raises(ValueError, match="20"):
        stroboscopic_analysis(ProbeRecord("x", rec.samples[:300], 16000.0), 500.0)
    with pytest.raises(ValueError, match="zero"):
        stroboscopic_analysis(ProbeRecord("x", np.zeros(16000), 16000.0), 500.0)


def test_phasor_csv(tmp_path):
    ph = HarmonicPhasors(500.0, np.array([1.0, 0.1j, -0.01]))
    ph.to_csv(tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "harmonic_index,re,im,magnitude,phase_rad"
    assert len(rows) == 4
    assert float(rows[2].split(",")[4]) == pytest.approx(math.pi / 2)


@pytest.fixture(scope="module")
def harmonic_setup():
    cav = CavitySpec(0.6, 0.4, 0.01, damping_map=5.0, sample_rate_hz=16000)
    return cav, (20, 5), (25, 40)


def test_linear_response_has_no_harmonics(harmonic_setup):
    cav, src, sc = harmonic_setup
    tmpl = ScattererSpec(sc, 1.5, 0.0, symmetry="even")
    rec = driven_record(tmpl, 0.0, cav, src, 1.0, 500.0, 1.0, 16000.0)
    ph = stroboscopic_analysis(rec, 500.0, 5)
    assert abs(ph.phasors[0]) == pytest.approx(1.0)
    assert np.all(ph.magnitudes_db[1:] < -60)


@pytest.fixture(scope="module")
def stable_bound(harmonic_setup):
    cav, src, sc = harmonic_setup
    return max_stable_gain(ScattererSpec(sc, 1.5, symmetry="even"), cav, 1.0, 500.0, src, duration_s=1.0)


def test_even_law_creates_second_harmonic_odd_law_does_not(harmonic_setup, stable_bound):
    cav, src, sc = harmonic_setup
    g = 0.5 * stable_bound
    even = stroboscopic_analysis(driven_record(ScattererSpec(sc, 1.5, symmetry="even"), g, cav, src, 1.0, 500.0, 1.0,
                                               16000.0), 500.0)
    odd = stroboscopic_analysis(driven_record(ScattererSpec(sc, 1.5, symmetry="odd"), g, cav, src, 1.0, 500.0, 1.0,
                                              16000.0), 500.0)
    assert even.magnitudes_db[1] > odd.magnitudes_db[1] + 20
    assert odd.magnitudes_db[2] > -80  # odd law still makes odd harmonics


def test_second_harmonic_grows_with_gain(harmonic_setup, stable_bound):
    cav, src, sc = harmonic_setup
    tmpl = ScattererSpec(sc, 1.5, symmetry="even")
    levels = [abs(stroboscopic_analysis(driven_record(tmpl, f * stable_bound, cav, src, 1.0, 500.0, 1.0, 16000.0),
                                        500.0).phasors[1])
              for f in (0.1, 0.3, 0.6)]
    assert levels[0] < levels[1] < levels[2]


def test_max_stable_gain_brackets_instability(harmonic_setup, stable_bound):
    cav, src, sc = harmonic_setup
    tmpl = ScattererSpec(sc, 1.5, symmetry="even")
    assert 0 < stable_bound < 1e6
    assert stable_bound == pytest.approx(float(f"{stable_bound:.2g}"), rel=1e-12)
    rec = driven_record(tmpl, stable_bound, cav, src, 1.0, 500.0, 1.0, 16000.0)
    assert np.all(np.isfinite(rec.samples))
