"""Impulse responses, decay rates and onset delays at the probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..encoding import pressure_source_scale
from ..wavefield import ProbeSpec, SourceSpec, derive_timestep, run
from .layout import Layout


def ricker(width_s: float, rate_hz: float, center_s: float | None = None) -> np.ndarray:
    """Zero-mean Mexican-hat pulse; ``width_s`` is the distance between its zero crossings.

    Its integral and the integral of its integral both vanish, so it leaves
    no static offset in a closed cavity.
    """
    sigma = width_s / 2.0
    center = 4.0 * sigma if center_s is None else center_s
    t = np.arange(int(math.ceil((center + 4.0 * sigma) * rate_hz)) + 1) / rate_hz
    a = ((t - center) / sigma) ** 2
    return (1.0 - a) * np.exp(-a / 2.0)


@dataclass
class ProbeResponse:
    label: str
    samples: np.ndarray
    decay_rate: float
    decay_time_s: float
    t60_s: float
    onset_delay_s: float
    distance_m: float
    non_decaying: bool


@dataclass
class MemoryProbeResult:
    responses: list[ProbeResponse]
    rate_hz: float
    theoretical_rate: float | None
    xcorr: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def max_xcorr(self) -> float:
        m = self.xcorr.copy()
        np.fill_diagonal(m, -np.inf)
        return float(m.max()) if m.size > 1 else 0.0


def envelope_decay(x: np.ndarray, rate_hz: float, start_s: float, block_s: float = 0.02) -> float:
    """Amplitude decay rate (1/s) from a straight-line fit to log block RMS."""
    i0 = int(start_s * rate_hz)
    nb = max(1, int(block_s * rate_hz))
    seg = x[i0:]
    nblk = len(seg) // nb
    if nblk < 4:
        raise ValueError("record too short after onset for an envelope fit")
    blocks = seg[: nblk * nb].reshape(nblk, nb)
    rms = np.sqrt(np.mean((blocks - blocks.mean()) ** 2, axis=1))
    t = (i0 + nb * (np.arange(nblk) + 0.5)) / rate_hz
    ok = rms > 0
    if ok.sum() < 4:
        return 0.0
    slope = np.polyfit(t[ok], np.log(rms[ok]), 1)[0]
    return float(-slope)


def onset_time(x: np.ndarray, rate_hz: float, fraction: float = 0.5) -> float:
    """First time the rectified signal reaches ``fraction`` of its early peak, linearly interpolated."""
    ax = np.abs(x)
    peak = ax.max()
    if peak == 0:
        return math.nan
    k = int(np.argmax(ax >= fraction * peak))
    if k == 0:
        return 0.0
    lo, hi = ax[k - 1], ax[k]
    frac = (fraction * peak - lo) / (hi - lo) if hi > lo else 0.0
    return (k - 1 + frac) / rate_hz


def run_memory_probe(
    layout: Layout,
    pulse_width_s: float = 2.5e-4,
    duration_s: float = 1.0,
    source_index: int = 0,
    fit_start_s: float | None = None,
) -> MemoryProbeResult:
    """Excite one source with a short pulse and characterize every probe.

    Probes are sampled at every solver step so onset delays resolve below a
    cell's travel time. The decay rate is the slope of the log envelope from
    ``fit_start_s`` (default: a quarter of the run) to the end; the decay
    time is its inverse (1/e of the amplitude) and a probe whose decay time
    reaches the run length is flagged non-decaying. The onset is the first
    half-peak crossing within the direct-path interval (distance/c plus two
    pulse widths), measured against a probe on the source cell itself.
    """
    cav0 = layout.cavity
    dt = derive_timestep(cav0)
    if pulse_width_s < 2 * dt:
        raise ValueError(f"pulse width must be at least 2 dt = {2 * dt:.3g} s")
    step_rate = 1.0 / dt
    cavity = replace(cav0, sample_rate_hz=step_rate)
    cell = layout.source_cells[source_index]
    wave = ricker(pulse_width_s, step_rate) * pressure_source_scale(cavity, cell)
    probes = list(layout.probes) + [ProbeSpec(cell, "__source__")]
    recs = run(cavity, [SourceSpec(cell, wave, rate_hz=step_rate)], probes, layout.scatterers, duration_s)
    *recs, here = recs
    t_src = onset_time(here.samples, step_rate)
    c_mean = float(np.mean(cav0.c_map))
    gamma = np.asarray(cav0.damping_map, dtype=float)
    theory = float(gamma.mean()) / 2.0 if np.allclose(gamma, gamma.flat[0]) else None
    start = duration_s / 4.0 if fit_start_s is None else fit_start_s
    out = []
    for p, r in zip(layout.probes, recs):
        d = math.hypot(p.position[0] - cell[0], p.position[1] - cell[1]) * cav0.dx
        first = int(min(len(r.samples), (d / c_mean + 2 * pulse_width_s) * step_rate + 8))
        rate = envelope_decay(r.samples, step_rate, start)
        t_decay = 1.0 / rate if rate > 0 else math.inf
        out.append(
            ProbeResponse(
                p.label,
                r.samples,
                rate,
                t_decay,
                math.log(1000.0) * t_decay,
                onset_time(r.samples[:first], step_rate) - t_src,
                d,
                t_decay >= duration_s,
            )
        )
    return MemoryProbeResult(out, step_rate, theory, normalized_xcorr([o.samples for o in out]),
                             {"source_cell": cell, "pulse_width_s": pulse_width_s})


def normalized_xcorr(signals) -> np.ndarray:
    """Pairwise max over lags of the normalized cross-correlation."""
    n = len(signals)
    m = np.ones((n, n))
    spec = []
    for x in signals:
        x = np.asarray(x, dtype=float) - np.mean(x)
        spec.append((np.fft.rfft(x, 2 * len(x)), np.linalg.norm(x)))
    for i in range(n):
        for j in range(i + 1, n):
            (a, na), (b, nb) = spec[i], spec[j]
            if na == 0 or nb == 0:
                m[i, j] = m[j, i] = 0.0
                continue
            cc = np.fft.irfft(a * np.conj(b))
            m[i, j] = m[j, i] = float(np.max(np.abs(cc)) / (na * nb))
    return m
