"""Input encodings: frequency-multiplexed random masks and delayed audio."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .wavefield import CavitySpec, SourceSpec


def pressure_source_scale(cavity: CavitySpec, cell: tuple[int, int] | None = None) -> float:
    """Factor turning a waveform in Pa into a point source term (Pa/s^2).

    With this scale a source adds ``(c dt/dx)**2 * w`` per step, so the
    near field has the same order of magnitude as ``w``.
    """
    c = float(cavity.c_map[cell]) if cell is not None else float(np.mean(cavity.c_map))
    return (c / cavity.dx) ** 2


@dataclass
class EncodingMask:
    """Random mask; ``s_in[n, m]`` weights carrier n on source m."""

    s_in: np.ndarray
    omega_hz: np.ndarray
    seed: int
    amplitude_scale: float = 1.0

    def __post_init__(self):
        self.s_in = np.asarray(self.s_in, dtype=float)
        self.omega_hz = np.asarray(self.omega_hz, dtype=float)
        if self.s_in.ndim != 2 or self.s_in.shape[0] != self.omega_hz.size:
            raise ValueError("s_in must have one row per carrier")
        if np.any(np.diff(self.omega_hz) <= 0):
            raise ValueError("carrier frequencies must be strictly increasing")
        if np.any(self.omega_hz <= 0):
            raise ValueError("carrier frequencies must be positive")

    @property
    def n_sources(self) -> int:
        return self.s_in.shape[1]

    @property
    def n_carriers(self) -> int:
        return self.s_in.shape[0]

    def check_rate(self, rate_hz: float) -> None:
        if self.omega_hz[-1] >= rate_hz / 6.0:
            raise ValueError(f"carriers must stay below Nyquist/3 = {rate_hz / 6:.1f} Hz")

    def global_scale(self, zeta_max: float = math.pi) -> float:
        """Fixed factor that keeps every |waveform| <= amplitude_scale for |zeta| <= zeta_max."""
        worst = float(np.max(np.sum(np.abs(self.s_in), axis=0))) * zeta_max
        return self.amplitude_scale / worst if worst > 0 else 0.0

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        np.savetxt(path, self.s_in, delimiter=",", fmt="%.17e")
        meta = {
            "seed": self.seed,
            "omega_hz": self.omega_hz.tolist(),
            "amplitude_scale": self.amplitude_scale,
            "shape": list(self.s_in.shape),
        }
        path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "EncodingMask":
        path = Path(path)
        meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
        s_in = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(s_in, np.array(meta["omega_hz"]), int(meta["seed"]), float(meta["amplitude_scale"]))


def default_carriers(n: int = 10, start_hz: float = 400.0, step_hz: float = 10.0) -> np.ndarray:
    return start_hz + step_hz * np.arange(n)


def make_mask(
    n_sources: int = 10,
    n_carriers: int = 10,
    seed: int = 0,
    omega_hz: Sequence[float] | None = None,
    amplitude_scale: float = 1.0,
) -> EncodingMask:
    rng = np.random.default_rng(seed)
    s_in = rng.uniform(-1.0, 1.0, size=(n_carriers, n_sources))
    omega = default_carriers(n_carriers) if omega_hz is None else np.asarray(omega_hz, dtype=float)
    return EncodingMask(s_in, omega, seed, amplitude_scale)


@dataclass
class InjectionPlan:
    """One waveform (in Pa) and onset delay per source."""

    waveforms: np.ndarray
    delays_s: np.ndarray
    rate_hz: float
    normalization: str = "peak"
    extrapolated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.waveforms = np.atleast_2d(np.asarray(self.waveforms, dtype=float))
        self.delays_s = np.asarray(self.delays_s, dtype=float).ravel()
        if self.delays_s.size != self.waveforms.shape[0]:
            raise ValueError("need one delay per waveform")
        if np.any(self.delays_s < 0):
            raise ValueError("delays must be >= 0")
        if not np.all(np.isfinite(self.waveforms)):
            raise ValueError("waveforms must be finite")

    @property
    def n_sources(self) -> int:
        return self.waveforms.shape[0]

    def rendered(self, n_samples: int | None = None) -> np.ndarray:
        """Waveforms with their delays applied, on the plan's sample grid."""
        shifts = np.round(self.delays_s * self.rate_hz).astype(int)
        if np.any(np.abs(shifts - self.delays_s * self.rate_hz) > 1e-6):
            raise ValueError("delays are not whole samples at the plan rate")
        length = n_samples or int(self.waveforms.shape[1] + shifts.max())
        out = np.zeros((self.n_sources, length))
        for m, (w, s) in enumerate(zip(self.waveforms, shifts)):
            seg = w[: max(0, length - s)]
            out[m, s : s + seg.size] = seg
        return out

    def to_sources(self, cavity: CavitySpec, cells: Sequence[tuple[int, int]]) -> list[SourceSpec]:
        if len(cells) != self.n_sources:
            raise ValueError(f"plan has {self.n_sources} sources, got {len(cells)} cells")
        return [
            SourceSpec(cell, w * pressure_source_scale(cavity, cell), delay_s=d, rate_hz=self.rate_hz)
            for cell, w, d in zip(cells, self.waveforms, self.delays_s)
        ]


def _peak_normalize(w: np.ndarray, amplitude: float) -> np.ndarray:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros_like(w)
    return w * (amplitude / peak)


def encode_scalar(
    zeta: float,
    mask: EncodingMask,
    duration_s: float,
    rate_hz: float,
    normalization: Literal["global", "peak"] = "global",
    zeta_range: tuple[float, float] = (-math.pi, math.pi),
) -> InjectionPlan:
    """Source m plays ``sum_n zeta * s_in[n, m] * sin(2 pi f_n t)``.

    ``"global"`` scaling multiplies by one mask-dependent constant so the
    amplitude still carries |zeta|; ``"peak"`` rescales each plan to the
    mask amplitude and therefore discards it.
    """
    mask.check_rate(rate_hz)
    if duration_s * mask.omega_hz[0] < 50:
        raise ValueError("duration must cover at least 50 periods of the lowest carrier")
    extrapolated = not (zeta_range[0] <= zeta <= zeta_range[1])
    if extrapolated:
        warnings.warn(f"zeta={zeta} lies outside the training range {zeta_range}", stacklevel=2)
    t = np.arange(int(round(duration_s * rate_hz))) / rate_hz
    carriers = np.sin(2 * np.pi * np.outer(mask.omega_hz, t))
    waves = (zeta * mask.s_in).T @ carriers
    if normalization == "global":
        zmax = max(abs(zeta_range[0]), abs(zeta_range[1]))
        waves = waves * mask.global_scale(zmax)
    elif normalization == "peak":
        waves = _peak_normalize(waves, mask.amplitude_scale)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return InjectionPlan(waves, np.zeros(mask.n_sources), rate_hz, normalization, extrapolated, {"zeta": zeta})


def resample(samples: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Polyphase Kaiser-windowed-sinc resampling between arbitrary rates."""
    if rate_in == rate_out:
        return np.asarray(samples, dtype=float)
    frac = Fraction(rate_out / rate_in).limit_denominator(10000)
    return signal.resample_poly(np.asarray(samples, dtype=float), frac.numerator, frac.denominator)


def encode_audio(
    samples: np.ndarray,
    n_sources: int,
    delay_s: float,
    rate_hz: float,
    amplitude_scale: float = 1.0,
    input_rate_hz: float | None = None,
) -> InjectionPlan:
    """Same peak-normalized audio on every source, source m delayed by ``m * delay_s``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("audio is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("audio contains non-finite samples")
    if input_rate_hz is not None:
        x = resample(x, input_rate_hz, rate_hz)
    if not np.any(x):
        raise ValueError("audio is silent; cannot normalize")
    x = _peak_normalize(x, amplitude_scale)
    waves = np.tile(x, (n_sources, 1))
    return InjectionPlan(waves, delay_s * np.arange(n_sources), rate_hz, "peak")


def read_wav(path: str | Path) -> tuple[np.ndarray, float]:
    """Mono WAV (PCM16 or float32) as float samples in [-1, 1] and its rate."""
    rate, data = wavfile.read(str(path))
    if data.ndim > 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    else:
        x = data.astype(float)
    return x, float(rate)
