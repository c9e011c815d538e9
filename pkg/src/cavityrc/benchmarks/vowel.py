"""Vowel classification with digital, linear and nonlinear reservoirs."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from ..encoding import encode_audio, resample
from ..readout import (
    FourierSelector,
    ReadoutModel,
    apply_band_norms,
    band_bins,
    fit_band_norms,
    fit_linear_svm,
    fit_pca,
    fourier_features,
)
from ..wavefield import InstabilityError, ProbeRecord
from .corpus import VowelDataset, VowelSample
from .layout import Layout, calibrate_gain
from .report import BenchmarkReport, confusion_matrix

log = logging.getLogger(__name__)

Mode = Literal["digital", "linear", "nonlinear"]
MODES: tuple[str, ...] = ("digital", "linear", "nonlinear")


@dataclass
class VowelSettings:
    duration_s: float = 0.4
    delay_s: float = 0.01
    amplitude: float = 1.0
    window_start_s: float = 0.0
    window_len: int = 4096
    bands: tuple[tuple[float, float], ...] = ((10.0, 1000.0), (1000.0, 3500.0))
    pca_k: int = 65
    svm_c: float = 10.0
    svm_epochs: int = 200
    gain_fraction: float = 0.5
    calibration_samples: int = 6
    gain_backoff: float = 0.7
    max_backoffs: int = 4

    def selector(self, rate_hz: float) -> FourierSelector:
        lo = min(b[0] for b in self.bands)
        hi = max(b[1] for b in self.bands)
        return FourierSelector(self.window_start_s, self.window_len, band_bins(lo, hi, self.window_len, rate_hz), rate_hz)


@dataclass
class VowelSpectra:
    """Magnitude spectra of every sample, (samples, bins, channels)."""

    mode: str
    magnitudes: np.ndarray
    selector: FourierSelector
    gain: float = 0.0
    info: dict = field(default_factory=dict)


def _audio_at(sample: VowelSample, rate_hz: float) -> np.ndarray:
    return resample(sample.audio, sample.rate_hz, rate_hz) if sample.rate_hz != rate_hz else sample.audio


def digital_record(sample: VowelSample, rate_hz: float, n_samples: int) -> ProbeRecord:
    """The audio itself as a single channel, zero-padded or cut to ``n_samples``."""
    x = _audio_at(sample, rate_hz)
    x = x / np.max(np.abs(x))
    out = np.zeros(n_samples)
    out[: min(n_samples, x.size)] = x[:n_samples]
    return ProbeRecord("audio", out, rate_hz)


def cavity_records(layout: Layout, sample: VowelSample, settings: VowelSettings) -> list[ProbeRecord]:
    rate = layout.cavity.sample_rate_hz
    plan = encode_audio(_audio_at(sample, rate), len(layout.source_cells), settings.delay_s, rate, settings.amplitude)
    return layout.simulate(plan.to_sources(layout.cavity, layout.source_cells), settings.duration_s)


def calibrate_vowel_gain(layout: Layout, samples: Sequence[VowelSample], settings: VowelSettings) -> float:
    """Common gain at ``gain_fraction`` of the bound found on a few spread-out samples."""
    idx = np.linspace(0, len(samples) - 1, settings.calibration_samples).round().astype(int)
    rate = layout.cavity.sample_rate_hz
    drives = []
    for i in idx:
        plan = encode_audio(_audio_at(samples[i], rate), len(layout.source_cells), settings.delay_s, rate, settings.amplitude)
        drives.append(plan.to_sources(layout.cavity, layout.source_cells))
    return calibrate_gain(layout, drives, settings.duration_s, settings.gain_fraction).gain


def vowel_spectra(
    layout: Layout | None,
    samples: Sequence[VowelSample],
    mode: Mode,
    settings: VowelSettings,
    gain: float | None = None,
    rate_hz: float | None = None,
    progress: Callable[[str], None] | None = None,
) -> VowelSpectra:
    """Simulate (or bypass the cavity for ``digital``) and take magnitude spectra.

    ``nonlinear`` calibrates the control gain unless ``gain`` is given. The
    calibration sees only a few samples, so if another sample diverges the
    calibrated gain is scaled by ``gain_backoff`` and the pass restarts, at
    most ``max_backoffs`` times; the count lands in ``info["backoffs"]``. A
    divergence at a fixed ``gain`` raises :class:`InstabilityError` naming
    the sample.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    rate = rate_hz or (layout.cavity.sample_rate_hz if layout is not None else 16000.0)
    sel = settings.selector(rate)
    n_rec = int(math.ceil(settings.duration_s * rate))
    if sel.start_index + sel.window_len_samples > n_rec:
        raise ValueError("analysis window is longer than the simulated duration")
    if mode != "digital" and layout is None:
        raise ValueError(f"mode {mode!r} needs a layout")
    say = progress or (lambda msg: None)

    def collect(lay: Layout | None) -> np.ndarray:
        mags = []
        t0 = time.perf_counter()
        for i, s in enumerate(samples):
            if lay is None:
                recs = [digital_record(s, rate, n_rec)]
            else:
                try:
                    recs = cavity_records(lay, s, settings)
                except InstabilityError as exc:
                    raise InstabilityError(exc.step_index, f"sample {i} ({s.speaker}/{s.label}) diverged at step "
                                                           f"{exc.step_index}") from None
            mags.append(np.abs(fourier_features(recs, sel)))
            if (i + 1) % 50 == 0:
                say(f"{mode}: {i + 1}/{len(samples)} samples ({time.perf_counter() - t0:.0f} s)")
        return np.array(mags)

    if mode == "digital":
        return VowelSpectra(mode, collect(None), sel)
    if mode == "linear":
        return VowelSpectra(mode, collect(layout.linear()), sel)
    if gain is not None:
        return VowelSpectra(mode, collect(layout.with_control(gain=float(gain))), sel, float(gain))
    g = calibrate_vowel_gain(layout, samples, settings)
    backoff = 0
    while True:
        try:
            return VowelSpectra(mode, collect(layout.with_control(gain=g)), sel, g, {"backoffs": backoff})
        except InstabilityError as exc:
            if backoff == settings.max_backoffs:
                raise
            log.warning("%s; retrying at gain %.4g", exc, g * settings.gain_backoff)
            g *= settings.gain_backoff
            backoff += 1


def train_vowel_classifier(
    spectra: VowelSpectra,
    labels: np.ndarray,
    train_idx: np.ndarray,
    settings: VowelSettings,
    seed: int = 0,
    classes: Sequence[str] | None = None,
) -> ReadoutModel:
    """Band Min-Max, PCA and a linear SVM fitted on the training rows."""
    sel = spectra.selector
    mags = spectra.magnitudes
    norms = fit_band_norms(mags[train_idx], sel.bin_hz, settings.bands)
    x = apply_band_norms(mags, sel.bin_hz, norms).reshape(len(mags), -1)
    k = min(settings.pca_k, len(train_idx) - 1, x.shape[1])
    pca = fit_pca(x[train_idx], k)
    fit = fit_linear_svm(pca.transform(x[train_idx]), labels[train_idx], settings.svm_c, settings.svm_epochs, seed,
                         n_classes=len(classes) if classes else None)
    return ReadoutModel(sel, fit.weights, fit.bias, "linear_svm", "magnitude", norms, pca,
                        classes=list(classes) if classes else None, seed=seed,
                        meta={"mode": spectra.mode, "gain": spectra.gain, "objective": fit.objective[-1]})


def classify(model: ReadoutModel, spectra: VowelSpectra, idx: np.ndarray) -> np.ndarray:
    return np.argmax(model.decision(spectra.magnitudes[idx]), axis=1)


def run_vowel_benchmark(
    layout: Layout | None,
    dataset: VowelDataset,
    mode: Mode,
    settings: VowelSettings | None = None,
    seed: int = 0,
    config_hash: str = "",
    spectra: VowelSpectra | None = None,
    gain: float | None = None,
    shuffle_labels: bool = False,
    progress: Callable[[str], None] | None = None,
) -> tuple[BenchmarkReport, ReadoutModel, VowelSpectra]:
    """Train on the dataset's train speakers, report on its test speakers.

    Pass ``spectra`` from an earlier call to re-evaluate another split
    without simulating again. ``shuffle_labels`` permutes the training
    labels (seeded) for a chance-level check.
    """
    settings = settings or VowelSettings()
    t0 = time.perf_counter()
    if spectra is None:
        spectra = vowel_spectra(layout, dataset.samples, mode, settings, gain, progress=progress)
    elif spectra.mode != mode:
        raise ValueError(f"spectra were computed for mode {spectra.mode!r}, not {mode!r}")
    y = dataset.labels
    y_train = y.copy()
    if shuffle_labels:
        y_train[dataset.train_idx] = np.random.default_rng(seed).permutation(y[dataset.train_idx])
    model = train_vowel_classifier(spectra, y_train, dataset.train_idx, settings, seed, dataset.classes)
    pred = classify(model, spectra, dataset.test_idx)
    cm = confusion_matrix(y[dataset.test_idx], pred, len(dataset.classes))
    train_acc = float(np.mean(classify(model, spectra, dataset.train_idx) == y_train[dataset.train_idx]))
    report = BenchmarkReport(
        task=f"vowel/{mode}",
        config_hash=config_hash,
        metrics={"accuracy": float(np.trace(cm) / cm.sum()), "train_accuracy": train_acc,
                 "parameters": model.n_parameters, "gain": spectra.gain, "pca_k": model.pca.k},
        classes=list(dataset.classes),
        confusion=cm,
        synthetic=dataset.synthetic,
        runtime_s=time.perf_counter() - t0,
        info={"origin": dataset.origin, "train_counts": dataset.class_counts(dataset.train_idx),
              "test_counts": dataset.class_counts(dataset.test_idx), "seed": seed,
              "layout": layout.name if layout is not None else None,
              "invented_geometry": bool(layout.invented_geometry) if layout is not None else False},
    )
    return report, model, spectra
