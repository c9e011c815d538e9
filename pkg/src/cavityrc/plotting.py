"""Figures written straight to files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_rmse_curve(sweep, path: str | Path) -> Path:
    pts = sweep.stable_points()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p.exponent for p in pts], [p.test_rmse for p in pts], "o-", label="test")
    ax.plot([p.exponent for p in pts], [p.train_rmse for p in pts], "s--", alpha=0.6, label="train")
    if np.isfinite(sweep.linear.test_rmse):
        ax.axhline(sweep.linear.test_rmse, color="gray", ls=":", label="linear (control off)")
    bad = [p.exponent for p in sweep.points if p.unstable]
    if bad:
        ax.plot(bad, [max(p.test_rmse for p in pts)] * len(bad) if pts else [1] * len(bad), "rx", label="unstable")
    ax.set_xlabel("exponent n")
    ax.set_ylabel("RMSE")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def plot_confusion(cm: np.ndarray, classes: Sequence[str], path: str | Path, title: str = "") -> Path:
    cm = np.asarray(cm)
    frac = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", color="white" if frac[i, j] > 0.5 else "black")
    ax.set_xticks(range(len(classes)), classes)
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    acc = np.trace(cm) / max(cm.sum(), 1)
    ax.set_title(f"{title} {100 * acc:.1f}%".strip())
    return _save(fig, path)


def plot_spectra(freqs_hz: np.ndarray, spectra: dict[str, np.ndarray], path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, s in spectra.items():
        with np.errstate(divide="ignore"):
            ax.plot(freqs_hz, 20 * np.log10(np.maximum(np.asarray(s), 1e-300)), lw=0.8, label=name)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("magnitude (dB)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_phasors(phasor_sets, labels: Sequence[str], path: str | Path) -> Path:
    """Harmonic amplitudes on the complex plane, one panel per gain."""
    n = len(phasor_sets)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8), squeeze=False)
    for ax, ph, lbl in zip(axes[0], phasor_sets, labels):
        for m, z in enumerate(ph.phasors, start=1):
            ax.annotate("", xy=(z.real, z.imag), xytext=(0, 0), arrowprops={"arrowstyle": "->", "color": f"C{m - 1}"})
            ax.plot([z.real], [z.imag], "o", ms=3, color=f"C{m - 1}", label=f"{m}f")
        ax.set_xlim(-1.1, 1.1)
        ax.set_ylim(-1.1, 1.1)
        ax.set_aspect("equal")
        ax.axhline(0, color="gray", lw=0.5)
        ax.axvline(0, color="gray", lw=0.5)
        ax.set_title(lbl, fontsize=9)
    axes[0][0].legend(fontsize=6, loc="lower left")
    return _save(fig, path)


def plot_impulse_responses(result, path: str | Path, max_probes: int = 6) -> Path:
    resp = result.responses[:max_probes]
    fig, axes = plt.subplots(len(resp), 1, figsize=(6, 1.2 * len(resp) + 0.6), sharex=True, squeeze=False)
    for ax, r in zip(axes[:, 0], resp):
        t = np.arange(len(r.samples)) / result.rate_hz
        ax.plot(t, r.samples, lw=0.4)
        ax.set_ylabel(r.label, rotation=0, labelpad=14)
        ax.text(0.99, 0.8, f"1/e {r.decay_time_s:.2f} s", transform=ax.transAxes, ha="right", fontsize=7)
    axes[-1, 0].set_xlabel("time (s)")
    return _save(fig, path)
