"""Actively controlled nonlinear scatterers and harmonic analysis.

Each scatterer senses the pressure at its own cell and drives the field back
through a power-law control output ``G * p**n``. The output is treated as
the volume velocity of a point monopole, so it enters the wave equation as
its time derivative (``coupling="velocity"``). A passive, uncontrolled
scatterer reduces to a linear load, which under that coupling is a local
damper. ``coupling="pressure"`` adds the control output to the source term
directly instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import _kernels
from .wavefield import (
    CavitySpec,
    InstabilityError,
    ProbeRecord,
    ProbeSpec,
    ReservoirState,
    SourceSpec,
    run,
)

_KIND = {"odd": _kernels.LAW_ODD, "even": _kernels.LAW_EVEN}


@dataclass(frozen=True)
class ScattererSpec:
    """One controlled membrane.

    ``symmetry="odd"`` is the signed power ``sign(p)|p|**n``; ``"even"`` is
    ``|p|**n``, which is the only one of the two that creates even harmonics.
    """

    position: tuple[int, int]
    exponent_n: float = 1.5
    gain_gnl: float = 0.0
    enabled: bool = True
    linear_load: float = 0.0
    symmetry: Literal["odd", "even"] = "odd"
    coupling: Literal["velocity", "pressure"] = "velocity"
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))
        if not 1.0 <= self.exponent_n <= 3.0:
            raise ValueError(f"exponent_n must lie in [1, 3], got {self.exponent_n}")
        if not math.isfinite(self.gain_gnl) or self.gain_gnl < 0:
            raise ValueError("gain_gnl must be finite and >= 0")
        if self.linear_load < 0:
            raise ValueError("linear_load must be >= 0")
        if self.symmetry not in _KIND:
            raise ValueError(f"unknown symmetry {self.symmetry!r}")
        if self.coupling not in ("velocity", "pressure"):
            raise ValueError(f"unknown coupling {self.coupling!r}")

    def with_gain(self, gain: float) -> "ScattererSpec":
        return replace(self, gain_gnl=float(gain))


def feedback(p_front, spec: ScattererSpec):
    """Control output for the sensed front pressure (scalar or array)."""
    p = np.asarray(p_front, dtype=float)
    if not spec.enabled:
        out = -spec.linear_load * p
    elif spec.symmetry == "odd":
        out = spec.gain_gnl * np.sign(p) * np.abs(p) ** spec.exponent_n
    else:
        out = spec.gain_gnl * np.abs(p) ** spec.exponent_n
    return float(out) if out.ndim == 0 else out


def _coupling_coef(spec: ScattererSpec, cavity: CavitySpec, dt: float) -> float:
    nu = float(cavity.c_map[spec.position]) * dt / cavity.dx
    return nu if spec.coupling == "velocity" else nu * nu


def kernel_arrays(scatterers: Sequence[ScattererSpec], cavity: CavitySpec, dt: float):
    """Pack scatterers into the flat arrays the compiled stepper expects."""
    n = len(scatterers)
    cells = np.array([s.position for s in scatterers], dtype=np.int64).reshape(n, 2)
    kind = np.empty(n, dtype=np.int64)
    gain = np.empty(n)
    expo = np.empty(n)
    coef = np.empty(n)
    velocity = np.empty(n, dtype=np.bool_)
    for k, s in enumerate(scatterers):
        if s.enabled:
            kind[k], gain[k], expo[k] = _KIND[s.symmetry], s.gain_gnl, s.exponent_n
        else:
            kind[k], gain[k], expo[k] = _kernels.LAW_LINEAR_LOAD, s.linear_load, 1.0
        coef[k] = _coupling_coef(s, cavity, dt)
        velocity[k] = s.coupling == "velocity"
    return cells, kind, gain, expo, coef, velocity


def source_term(
    state: ReservoirState, cavity: CavitySpec, dt: float, scatterers: Sequence[ScattererSpec]
) -> np.ndarray:
    """Per-cell feedback field (Pa/s^2) for :func:`cavityrc.wavefield.step`."""
    field = np.zeros(cavity.shape)
    for s in scatterers:
        f_now = feedback(state.p_next[s.position], s)
        scale = _coupling_coef(s, cavity, dt) / dt**2
        if s.coupling == "velocity":
            field[s.position] += scale * (f_now - feedback(state.p_curr[s.position], s))
        else:
            field[s.position] += scale * f_now
    return field


def sine_drive(amplitude: float, frequency_hz: float, duration_s: float, rate_hz: float, ramp_s: float = 0.2):
    """Sinusoid with a raised-cosine onset, sampled at ``rate_hz``."""
    t = np.arange(int(math.ceil(duration_s * rate_hz)) + 1) / rate_hz
    env = np.where(t < ramp_s, 0.5 - 0.5 * np.cos(np.pi * t / max(ramp_s, 1e-12)), 1.0)
    return amplitude * env * np.sin(2 * np.pi * frequency_hz * t)


def driven_record(template, gain, cavity, source_cell, amplitude, f0, duration_s, rate_hz) -> ProbeRecord:
    """Front-pressure record of one scatterer at ``gain`` under a ramped sine drive of ``amplitude`` Pa."""
    from .encoding import pressure_source_scale

    wave = sine_drive(amplitude * pressure_source_scale(cavity), f0, duration_s, rate_hz)
    src = SourceSpec(source_cell, wave, rate_hz=rate_hz)
    probe = ProbeSpec(template.position, template.label or "front")
    (rec,) = run(cavity, [src], [probe], [template.with_gain(gain)], duration_s)
    return rec


def _floor_sig(x: float, digits: int = 2) -> float:
    if x <= 0:
        return 0.0
    e = math.floor(math.log10(x)) - digits + 1
    return round(math.floor(x / 10**e + 1e-9) * 10**e, max(0, -e))


def max_stable_gain(
    template: ScattererSpec,
    cavity: CavitySpec,
    drive_amplitude: float,
    fundamental_hz: float,
    source_cell: tuple[int, int],
    duration_s: float = 2.0,
    blowup_factor: float = 100.0,
    gain_ceiling: float = 1e6,
) -> float:
    """Largest gain (2 significant figures) that keeps a driven run stable.

    A run counts as unstable when it raises :class:`InstabilityError` or when
    the probe RMS reaches ``blowup_factor`` times the drive amplitude, which
    catches soft divergence that takes long to overflow. Returns 0.0 if even a vanishing gain is
    unstable, and ``gain_ceiling`` if nothing below it is. The returned
    value itself has been checked, since the stable set is not always an
    interval near its edge.
    """
    rate = 8.0 * max(fundamental_hz, cavity.sample_rate_hz / 8.0)
    limit = blowup_factor * abs(drive_amplitude)

    def stable(g: float) -> bool:
        try:
            rec = driven_record(template, g, cavity, source_cell, drive_amplitude, fundamental_hz, duration_s, rate)
        except InstabilityError:
            return False
        return float(np.sqrt(np.mean(rec.samples**2))) < limit

    lo, hi = 0.0, 1.0
    while stable(hi):
        lo, hi = hi, hi * 4.0
        if hi > gain_ceiling:
            return gain_ceiling
    if lo == 0.0:
        tiny = 1e-9
        if not stable(tiny):
            return 0.0
        lo = tiny
    while (hi - lo) > 2e-3 * hi:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    # the edge is not monotone in gain, so only return a value that was run
    g = _floor_sig(lo)
    for _ in range(40):
        if stable(g):
            return g
        g = _floor_sig(0.95 * g)
    return 0.0


@dataclass
class HarmonicPhasors:
    fundamental_hz: float
    phasors: np.ndarray
    label: str = ""

    @property
    def magnitudes_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self.phasors))

    def rows(self):
        for m, z in enumerate(self.phasors, start=1):
            yield m, z.real, z.imag, abs(z), math.atan2(z.imag, z.real)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["harmonic_index", "re", "im", "magnitude", "phase_rad"])
            for row in self.rows():
                w.writerow([row[0]] + [f"{v:.12e}" for v in row[1:]])


def stroboscopic_analysis(record: ProbeRecord, fundamental_hz: float, k_harmonics: int = 5) -> HarmonicPhasors:
    """Complex amplitudes of harmonics 1..k over whole periods of the tail.

    The window is the longest run of whole fundamental periods (an exact
    integer number of samples) inside the second half of the record.
    Amplitudes are single-sided and divided by the fundamental's magnitude.
    """
    fs = record.sample_rate_hz
    if k_harmonics < 1:
        raise ValueError("k_harmonics must be >= 1")
    if fundamental_hz * k_harmonics >= fs / 2:
        raise ValueError(f"{k_harmonics} harmonics of {fundamental_hz} Hz exceed Nyquist at {fs} Hz")
    period = fs / fundamental_hz
    if len(record.samples) < 20 * period:
        raise ValueError("record is shorter than 20 fundamental periods")
    avail = len(record.samples) // 2
    n_periods = int(avail // period)
    while n_periods > 0 and abs(n_periods * period - round(n_periods * period)) > 1e-6:
        n_periods -= 1
    if n_periods == 0:
        raise ValueError(f"no whole number of {fundamental_hz} Hz periods fits the tail at {fs} Hz")
    n = int(round(n_periods * period))
    x = record.samples[-n:]
    k = np.arange(n)
    amps = np.array(
        [2.0 / n * np.sum(x * np.exp(-2j * np.pi * m * n_periods * k / n)) for m in range(1, k_harmonics + 1)]
    )
    ref = abs(amps[0])
    if ref == 0:
        raise ValueError("fundamental component is zero")
    return HarmonicPhasors(fundamental_hz, amps / ref, record.label)
