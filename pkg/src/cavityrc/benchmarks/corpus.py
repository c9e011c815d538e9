"""Vowel corpus ingestion and the synthetic formant fallback."""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from ..encoding import read_wav, resample

VOWELS = ("ah", "aw", "uh")
CORPUS_ENV = "CAVITYRC_CORPUS"

# Approximate adult steady-state averages (Hz) for /a/ "hod", /o/ "hawed",
# /^/ "hud": F0, F1, F2, F3, F4.
_FORMANTS = {
    "m": {
        "ah": (138, 768, 1333, 2522, 3687),
        "aw": (143, 652, 997, 2538, 3486),
        "uh": (143, 623, 1200, 2550, 3557),
    },
    "f": {
        "ah": (229, 936, 1551, 2815, 4299),
        "aw": (225, 781, 1136, 2824, 3923),
        "uh": (218, 753, 1426, 2933, 4092),
    },
}
_BANDWIDTHS = (90.0, 110.0, 170.0, 250.0)


class CorpusError(RuntimeError):
    pass


@dataclass
class VowelSample:
    audio: np.ndarray
    rate_hz: float
    label: str
    speaker: str
    sex: str
    source: str = ""


@dataclass
class VowelDataset:
    samples: list[VowelSample]
    train_idx: np.ndarray
    test_idx: np.ndarray
    synthetic: bool = False
    origin: str = ""
    classes: tuple[str, ...] = VOWELS
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        tr = {self.samples[i].speaker for i in self.train_idx}
        te = {self.samples[i].speaker for i in self.test_idx}
        if tr & te:
            raise CorpusError(f"speakers in both splits: {sorted(tr & te)[:5]}")
        for name, idx in (("train", self.train_idx), ("test", self.test_idx)):
            present = {self.samples[i].label for i in idx}
            if present != set(self.classes):
                raise CorpusError(f"{name} split is missing classes {set(self.classes) - present}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.classes.index(s.label) for s in self.samples])

    def class_counts(self, idx=None) -> dict[str, int]:
        idx = range(len(self.samples)) if idx is None else idx
        c = Counter(self.samples[i].label for i in idx)
        return {k: c.get(k, 0) for k in self.classes}

    def with_split(self, seed: int, test_fraction: float = 0.3) -> "VowelDataset":
        tr, te = speaker_split(self.samples, seed, test_fraction)
        return VowelDataset(self.samples, tr, te, self.synthetic, self.origin, self.classes, dict(self.info))


def speaker_split(samples, seed: int, test_fraction: float = 0.3):
    """Hold out whole speakers, stratified by sex, with a seeded shuffle."""
    rng = np.random.default_rng(seed)
    test_speakers = set()
    for sex in sorted({s.sex for s in samples}):
        spk = sorted({s.speaker for s in samples if s.sex == sex})
        rng.shuffle(spk)
        k = int(round(test_fraction * len(spk)))
        test_speakers.update(spk[:k])
    test = np.array([i for i, s in enumerate(samples) if s.speaker in test_speakers], dtype=int)
    train = np.array([i for i, s in enumerate(samples) if s.speaker not in test_speakers], dtype=int)
    return train, test


def _glottal_train(f0_track: np.ndarray, rate: float, open_quotient: float = 0.6) -> np.ndarray:
    """Rosenberg-style glottal flow derivative driven by an F0 track."""
    phase = np.cumsum(f0_track / rate) % 1.0
    oq = open_quotient
    rise = 0.6 * oq
    flow = np.where(
        phase < rise,
        0.5 * (1 - np.cos(np.pi * phase / rise)),
        np.where(phase < oq, np.cos(0.5 * np.pi * (phase - rise) / (oq - rise)), 0.0),
    )
    return np.diff(flow, prepend=0.0)


def _resonator(x: np.ndarray, freq: float, bw: float, rate: float) -> np.ndarray:
    r = np.exp(-np.pi * bw / rate)
    theta = 2 * np.pi * freq / rate
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return signal.lfilter([sum(a)], a, x)


def synth_vowel(
    f0: float,
    formants,
    rate: float,
    duration_s: float,
    rng: np.random.Generator,
    noise_db: float = -30.0,
) -> np.ndarray:
    """Cascade formant synthesis of one vowel token."""
    n = int(duration_s * rate)
    t = np.arange(n) / rate
    drift = 1.0 + rng.uniform(-0.06, 0.06) * (t / duration_s - 0.5)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t + rng.uniform(0, 2 * np.pi))
    f0_track = f0 * drift * vibrato * (1 + 0.005 * rng.standard_normal(n))
    x = _glottal_train(f0_track, rate)
    x = x + 10 ** (noise_db / 20) * np.std(x) * rng.standard_normal(n)
    for freq, bw in zip(formants, _BANDWIDTHS):
        if freq < 0.45 * rate:
            x = _resonator(x, freq, bw * rng.uniform(0.8, 1.25), rate)
    ramp = int(0.03 * rate)
    env = np.ones(n)
    env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[-ramp:] = env[:ramp][::-1]
    x = x * env
    return x / np.max(np.abs(x))


def synthetic_corpus(
    seed: int = 0,
    n_male: int = 45,
    n_female: int = 48,
    rate_hz: float = 16000.0,
    duration_s: tuple[float, float] = (0.22, 0.3),
    speaker_scale_sd: float = 0.06,
    token_jitter_sd: float = 0.05,
) -> list[VowelSample]:
    """Every speaker says each vowel once, so classes are balanced by construction.

    Speakers differ by sex, an overall vocal-tract scale applied to all
    formants and a personal F0; each token adds independent formant and F0
    jitter.
    """
    rng = np.random.default_rng(seed)
    out = []
    speakers = [("m", i) for i in range(n_male)] + [("f", i) for i in range(n_female)]
    for sex, i in speakers:
        spk = f"{sex}{i:02d}"
        scale = rng.normal(1.0, speaker_scale_sd)
        f0_base = rng.normal(1.0, 0.1)
        for v in VOWELS:
            f0, *fmts = _FORMANTS[sex][v]
            fmts = [f * scale * rng.normal(1.0, token_jitter_sd) for f in fmts]
            fmts = sorted(fmts)
            dur = rng.uniform(*duration_s)
            audio = synth_vowel(f0 * f0_base * rng.normal(1.0, 0.04), fmts, rate_hz, dur, rng)
            out.append(VowelSample(audio, rate_hz, v, spk, sex, "synthetic"))
    return out


def ingest_vowel_corpus(path: str | Path | None, split_seed: int = 0, test_fraction: float = 0.3) -> VowelDataset:
    """Load a corpus directory with a ``manifest.csv`` (filename,class,speaker,sex).

    Only the ah/aw/uh classes are kept. ``path=None`` falls back to the
    ``CAVITYRC_CORPUS`` environment variable.
    """
    if path is None:
        path = os.environ.get(CORPUS_ENV)
    if not path:
        raise CorpusError(_missing_msg("<unset>"))
    root = Path(path)
    manifest = root / "manifest.csv"
    if not root.is_dir() or not manifest.is_file():
        raise CorpusError(_missing_msg(root))
    samples, bad = [], []
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"filename", "class", "speaker", "sex"} - set(reader.fieldnames or ())
        if missing:
            raise CorpusError(f"{manifest}: missing columns {sorted(missing)}")
        for row in reader:
            label = row["class"].strip().lower()
            if label not in VOWELS:
                continue
            f = root / row["filename"].strip()
            sex = row["sex"].strip().lower()[:1]
            if not f.is_file() or sex not in ("m", "f"):
                bad.append(row["filename"])
                continue
            audio, rate = read_wav(f)
            samples.append(VowelSample(audio, rate, label, row["speaker"].strip(), sex, str(f)))
    if bad:
        raise CorpusError(f"manifest entries missing or malformed: {', '.join(bad[:20])}")
    if not samples:
        raise CorpusError(f"{root}: no ah/aw/uh recordings listed in manifest.csv")
    tr, te = speaker_split(samples, split_seed, test_fraction)
    return VowelDataset(samples, tr, te, synthetic=False, origin=str(root))


def synthetic_dataset(seed: int = 0, split_seed: int = 0, test_fraction: float = 0.3, **kw) -> VowelDataset:
    samples = synthetic_corpus(seed, **kw)
    tr, te = speaker_split(samples, split_seed, test_fraction)
    return VowelDataset(samples, tr, te, synthetic=True, origin=f"synthetic(seed={seed})")


def _missing_msg(root) -> str:
    return (
        f"vowel corpus not found at {root}. Expected a directory holding mono WAV files and a "
        "manifest.csv with columns filename,class,speaker,sex (class in ah/aw/uh/..., sex m/f); set "
        f"{CORPUS_ENV} or pass the path, or enable the synthetic fallback."
    )


def resampled(sample: VowelSample, rate_hz: float) -> np.ndarray:
    return resample(sample.audio, sample.rate_hz, rate_hz)
