"""Run configuration: strict schema, profiles, validation and hashing.

A config file is YAML (or JSON) with the sections ``cavity``,
``scatterers``, ``encoding``, ``readout``, ``task``, ``seeds`` plus
``schema_version``, ``profile`` and ``output_dir``. Values not given fall
back to the named profile. Unknown keys are errors.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class CavityConfig:
    geometry: str = "cavity"
    width_m: float = 2.0
    height_m: float = 1.0
    dx: float = 0.01
    sample_rate_hz: float = 16000.0
    c: float = 343.0
    damping: float = 5.0
    boundary: str = "rigid"
    absorbing_layer_cells: int = 20
    absorbing_max_sigma: float = 2000.0
    cfl: float = 0.95
    inclusions: int = 15
    inclusion_c: float = 150.0
    inclusion_cells: int = 3


@dataclass
class ScattererConfig:
    count: int = 10
    positions: Optional[list[list[int]]] = None
    exponent_n: float = 1.5
    symmetry: str = "even"
    coupling: str = "velocity"
    enabled: bool = True
    gain: Optional[float] = None
    gain_fraction: float = 0.8


@dataclass
class DriveConfig:
    kind: str = "none"
    frequency_hz: float = 500.0
    amplitude: float = 1.0
    zeta: float = 1.0
    width_s: float = 2.5e-4
    path: Optional[str] = None


@dataclass
class EncodingConfig:
    n_sources: int = 10
    source_column: int = 2
    sources: Optional[list[list[int]]] = None
    carriers_hz: Optional[list[float]] = None
    delay_s: float = 0.01
    amplitude: float = 1.0
    drive: DriveConfig = field(default_factory=DriveConfig)


@dataclass
class ProbeConfig:
    label: str
    position: list[int]


@dataclass
class ReadoutConfig:
    probes: Optional[list[ProbeConfig]] = None
    window_start_s: float = 0.0
    window_len: int = 4096
    bands: list[list[float]] = field(default_factory=lambda: [[10.0, 1000.0], [1000.0, 3500.0]])
    pca_k: int = 65
    svm_c: float = 1.0
    svm_epochs: int = 200
    ridge_lambda: float = 0.01
    feature: str = "intensity"
    floor_db: Optional[float] = 80.0


@dataclass
class SimulateTask:
    duration_s: float = 0.1
    wav: bool = True


@dataclass
class SincTaskConfig:
    n_train: int = 100
    n_test: int = 50
    exponents: list[float] = field(default_factory=lambda: [1.0, 1.1, 1.3, 1.5, 1.7, 1.9])
    dx: Optional[float] = 0.02
    sample_rate_hz: Optional[float] = 8000.0
    inclusions: Optional[int] = 0
    duration_s: float = 0.5
    window_s: float = 0.2
    onset_s: float = 0.1
    max_rmse: float = 0.1
    max_ratio: float = 0.5


@dataclass
class VowelTaskConfig:
    corpus: Optional[str] = None
    synthetic_fallback: bool = True
    modes: list[str] = field(default_factory=lambda: ["digital", "linear", "nonlinear"])
    eval_seeds: int = 3
    duration_s: float = 0.4
    gain_fraction: float = 0.5
    svm_c: float = 10.0
    n_male: int = 45
    n_female: int = 48
    min_margin_linear: float = 5.0
    min_margin_digital: float = 10.0


@dataclass
class MemoryTaskConfig:
    pulse_width_s: float = 2.5e-4
    duration_s: float = 1.0
    source_index: int = 0
    decay_tolerance: float = 0.2
    max_xcorr: float = 0.99


@dataclass
class CharacterizeTaskConfig:
    gain_factors: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.8, 1.0])
    duration_s: float = 2.0
    drive_amplitude: float = 1.0
    source_index: int = 0
    harmonics: int = 5
    gate_factor: float = 0.8
    min_second_harmonic_db: float = -20.0
    max_passive_harmonic_db: float = -60.0


@dataclass
class TaskConfig:
    simulate: SimulateTask = field(default_factory=SimulateTask)
    sinc: SincTaskConfig = field(default_factory=SincTaskConfig)
    vowel: VowelTaskConfig = field(default_factory=VowelTaskConfig)
    memory: MemoryTaskConfig = field(default_factory=MemoryTaskConfig)
    characterize: CharacterizeTaskConfig = field(default_factory=CharacterizeTaskConfig)


@dataclass
class Seeds:
    """``mask``: encoding mask and layout geometry; ``split``: data draws and splits; ``svm``: classifier."""

    mask: int = 0
    split: int = 0
    svm: int = 0


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    profile: str = "fast"
    output_dir: str = "out"
    cavity: CavityConfig = field(default_factory=CavityConfig)
    scatterers: ScattererConfig = field(default_factory=ScattererConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self)


PROFILES: dict[str, dict] = {
    "fast": {},
    "full": {
        "cavity": {"dx": 0.005, "inclusions": 60, "inclusion_cells": 6},
        "task": {
            "sinc": {"dx": 0.01, "sample_rate_hz": 16000.0},
            "vowel": {"duration_s": 0.5},
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_scalar(tp, value, where: str):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (inner,) = typing.get_args(tp)
        return [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if value is None:
        raise ConfigError(f"{where}: value is required")
    return _check_scalar(tp, value, where)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{where}.{f.name}" if where else f.name)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{where}: missing required key {f.name}")
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    """Resolve ``data`` against its profile and validate it."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version} is not supported (expected {SCHEMA_VERSION})")
    profile = data.get("profile", "fast")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = _build(RunConfig, _merge(PROFILES[profile], data), "")
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    return from_dict(data)


def profile_config(name: str = "fast", **sections) -> RunConfig:
    return from_dict({"profile": name, **sections})


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON of everything that affects results (not ``output_dir``)."""
    d = cfg.to_dict()
    d.pop("output_dir")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def grid_shape(cfg: RunConfig, dx: float | None = None) -> tuple[int, int]:
    dx = dx or cfg.cavity.dx
    return int(round(cfg.cavity.height_m / dx)), int(round(cfg.cavity.width_m / dx))


def _choice(value, options, where):
    if value not in options:
        raise ConfigError(f"{where}: {value!r} is not one of {list(options)}")


def _cell(pos, shape, where):
    if len(pos) != 2 or not (0 <= pos[0] < shape[0] and 0 <= pos[1] < shape[1]):
        raise ConfigError(f"{where}: cell {pos} lies outside the {shape[0]}x{shape[1]} grid")


def validate(cfg: RunConfig) -> None:
    """Cross-field checks that must hold before any simulation starts."""
    cav = cfg.cavity
    _choice(cav.geometry, ("cavity", "room"), "cavity.geometry")
    _choice(cav.boundary, ("rigid", "absorbing"), "cavity.boundary")
    for name in ("width_m", "height_m", "dx", "sample_rate_hz", "c"):
        if getattr(cav, name) <= 0:
            raise ConfigError(f"cavity.{name} must be > 0")
    if cav.damping < 0:
        raise ConfigError("cavity.damping must be >= 0")
    if not 0 < cav.cfl <= 1:
        raise ConfigError("cavity.cfl must lie in (0, 1]")
    shape = grid_shape(cfg)
    if min(shape) < 8:
        raise ConfigError(f"grid {shape} is too small; need at least 8 cells per side")

    sc = cfg.scatterers
    _choice(sc.symmetry, ("odd", "even"), "scatterers.symmetry")
    _choice(sc.coupling, ("velocity", "pressure"), "scatterers.coupling")
    if not 1.0 <= sc.exponent_n <= 3.0:
        raise ConfigError("scatterers.exponent_n must lie in [1, 3]")
    if sc.gain is not None and (sc.gain < 0 or not math.isfinite(sc.gain)):
        raise ConfigError("scatterers.gain must be finite and >= 0")
    if not 0 < sc.gain_fraction <= 1:
        raise ConfigError("scatterers.gain_fraction must lie in (0, 1]")
    if sc.positions is not None:
        for i, p in enumerate(sc.positions):
            _cell(p, shape, f"scatterers.positions[{i}]")

    enc = cfg.encoding
    if enc.sources is not None:
        for i, p in enumerate(enc.sources):
            _cell(p, shape, f"encoding.sources[{i}]")
    elif enc.n_sources < 0 or not 0 <= enc.source_column < shape[1]:
        raise ConfigError("encoding.n_sources must be >= 0 and source_column inside the grid")
    if enc.carriers_hz is not None:
        if any(b <= a for a, b in zip(enc.carriers_hz, enc.carriers_hz[1:])):
            raise ConfigError("encoding.carriers_hz must be strictly increasing")
        if max(enc.carriers_hz, default=0) >= cav.sample_rate_hz / 6:
            raise ConfigError("encoding.carriers_hz must stay below sample_rate_hz / 6")
    _choice(enc.drive.kind, ("none", "sine", "pulse", "scalar", "audio"), "encoding.drive.kind")
    if enc.drive.kind == "audio" and not enc.drive.path:
        raise ConfigError("encoding.drive.path is required for an audio drive")

    ro = cfg.readout
    if ro.probes is not None:
        labels = [p.label for p in ro.probes]
        if len(set(labels)) != len(labels):
            raise ConfigError("readout.probes labels must be unique")
        for p in ro.probes:
            if len(p.position) != 2 or not (0 <= p.position[0] < shape[0] and 0 <= p.position[1] < shape[1]):
                raise ConfigError(f"probe {p.label!r} at {p.position} lies outside the {shape[0]}x{shape[1]} grid")
    nyq = cav.sample_rate_hz / 2
    edges = sorted(tuple(b) for b in ro.bands)
    for b in edges:
        if len(b) != 2 or not 0 <= b[0] < b[1] <= nyq:
            raise ConfigError(f"readout.bands: {list(b)} must satisfy 0 <= lo < hi <= Nyquist ({nyq:g} Hz)")
    for a, b in zip(edges, edges[1:]):
        if b[0] < a[1]:
            raise ConfigError(f"readout.bands {list(a)} and {list(b)} overlap")
    _choice(ro.feature, ("intensity", "magnitude"), "readout.feature")
    if ro.pca_k < 1 or ro.window_len < 8 or ro.svm_epochs < 1 or ro.ridge_lambda < 0:
        raise ConfigError("readout: pca_k >= 1, window_len >= 8, svm_epochs >= 1 and ridge_lambda >= 0 required")

    t = cfg.task
    vowel_win = (ro.window_start_s * cav.sample_rate_hz + ro.window_len) / cav.sample_rate_hz
    if vowel_win > t.vowel.duration_s + 1e-12:
        raise ConfigError("readout window extends past task.vowel.duration_s")
    for m in t.vowel.modes:
        _choice(m, ("digital", "linear", "nonlinear"), "task.vowel.modes")
    if t.vowel.eval_seeds < 1:
        raise ConfigError("task.vowel.eval_seeds must be >= 1")
    if any(not 1.0 <= n <= 2.0 for n in t.sinc.exponents):
        raise ConfigError("task.sinc.exponents must lie in [1, 2]")
    if t.sinc.n_train < 100:
        raise ConfigError("task.sinc.n_train must be >= 100")
    if t.sinc.window_s > t.sinc.duration_s:
        raise ConfigError("task.sinc.window_s exceeds its duration")
    if t.simulate.duration_s <= 0:
        raise ConfigError("task.simulate.duration_s must be > 0")
    if not t.characterize.gain_factors or any(g < 0 for g in t.characterize.gain_factors):
        raise ConfigError("task.characterize.gain_factors must be non-empty and >= 0")
