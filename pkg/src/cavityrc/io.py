"""Artifact files: probe CSV/WAV, checksummed run manifest."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from . import __version__
from .wavefield import ProbeRecord

MANIFEST = "manifest.json"


def write_records_csv(path: str | Path, records: Sequence[ProbeRecord]) -> None:
    """``time_s`` column then one column per probe label, 17 significant digits."""
    if not records:
        Path(path).write_text("time_s\n")
        return
    rates = {r.sample_rate_hz for r in records}
    lengths = {len(r.samples) for r in records}
    if len(rates) != 1 or len(lengths) != 1:
        raise ValueError("records must share rate and length")
    t = records[0].times
    data = np.column_stack([t] + [r.samples for r in records])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [r.label for r in records])
        for row in data:
            w.writerow([f"{v:.17g}" for v in row])


def read_records_csv(path: str | Path) -> list[ProbeRecord]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows to infer the sample rate")
    rate = 1.0 / (data[1, 0] - data[0, 0])
    return [ProbeRecord(lbl, data[:, k + 1].copy(), round(rate, 6)) for k, lbl in enumerate(header[1:])]


def write_records_wav(path: str | Path, records: Sequence[ProbeRecord]) -> None:
    """Multichannel float32 WAV, one channel per probe (values in Pa, unscaled)."""
    if not records:
        raise ValueError("no records to write")
    rate = records[0].sample_rate_hz
    if abs(rate - round(rate)) > 1e-9:
        raise ValueError("WAV needs an integer sample rate")
    data = np.column_stack([r.samples for r in records]).astype(np.float32)
    wavfile.write(str(path), int(round(rate)), data)


def sha256_of(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    command: str
    files: dict[str, str]
    started: str
    finished: str
    tool_version: str = __version__
    stages: dict[str, float] = field(default_factory=dict)
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class ArtifactWriter:
    """Single point through which a run writes its files.

    Any previous manifest in the directory is removed on creation, so a
    manifest exists only for a run that reached :meth:`finalize`.
    """

    def __init__(self, out_dir: str | Path, config_hash: str, command: str):
        self.root = Path(out_dir)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.root}: {exc.strerror}") from None
        (self.root / MANIFEST).unlink(missing_ok=True)
        self.config_hash = config_hash
        self.command = command
        self.started = _now()
        self.files: list[str] = []
        self.stages: dict[str, float] = {}

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return p

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def records(self, stem: str, records: Sequence[ProbeRecord], wav: bool = True) -> list[Path]:
        out = [self.path(f"{stem}.csv")]
        write_records_csv(out[0], records)
        if wav and records:
            out.append(self.path(f"{stem}.wav"))
            write_records_wav(out[1], records)
        return out

    def log(self, message: str) -> None:
        """Append to ``run.log``; logs are not part of the manifest."""
        with open(self.root / "run.log", "a") as fh:
            fh.write(f"{message}\n")

    def finalize(self, status: str = "ok") -> RunManifest:
        """Checksum every artifact and write the manifest last.

        A run that did not finish cleanly lists only the files it managed to
        write; a clean run with a missing artifact is an error.
        """
        missing = [f for f in self.files if not (self.root / f).is_file()]
        if missing and status == "ok":
            raise FileNotFoundError(f"artifacts were registered but not written: {missing}")
        self.files = [f for f in self.files if f not in missing]
        files = {f: sha256_of(self.root / f) for f in sorted(self.files)}
        m = RunManifest(self.config_hash, self.command, files, self.started, _now(), stages=self.stages, status=status)
        (self.root / MANIFEST).write_text(m.to_json())
        return m


def load_manifest(out_dir: str | Path) -> dict:
    return json.loads((Path(out_dir) / MANIFEST).read_text())
