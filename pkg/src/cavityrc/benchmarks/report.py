"""Benchmark reports and classification metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def precision_recall(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class precision and recall; 0 where a class is never predicted/present."""
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    return precision, recall


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


@dataclass
class BenchmarkReport:
    """Outcome of one benchmark run.

    ``runtime_s`` is kept out of :meth:`to_json` so that two runs with the
    same configuration write byte-identical reports; timings go to the run
    manifest instead.
    """

    task: str
    config_hash: str
    metrics: dict
    classes: list[str] | None = None
    confusion: np.ndarray | None = None
    gates: dict = field(default_factory=dict)
    synthetic: bool = False
    runtime_s: float = 0.0
    artifacts: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.confusion is not None:
            self.confusion = np.asarray(self.confusion, dtype=np.int64)
            if self.classes is None or self.confusion.shape != (len(self.classes),) * 2:
                raise ValueError("confusion matrix must be classes x classes")

    @property
    def accuracy(self) -> float | None:
        if self.confusion is None:
            return None
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def passed(self) -> bool:
        return all(bool(g["passed"]) for g in self.gates.values())

    def per_class(self) -> dict:
        if self.confusion is None:
            return {}
        p, r = precision_recall(self.confusion)
        return {c: {"precision": float(p[i]), "recall": float(r[i]), "support": int(self.confusion[i].sum())}
                for i, c in enumerate(self.classes)}

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "config_hash": self.config_hash,
            "synthetic": self.synthetic,
            "metrics": self.metrics,
            "gates": self.gates,
            "passed": self.passed,
            "artifacts": dict(sorted(self.artifacts.items())),
            "info": self.info,
        }
        if self.confusion is not None:
            d["classes"] = list(self.classes)
            d["confusion"] = self.confusion
            d["accuracy"] = self.accuracy
            d["per_class"] = self.per_class()
        return _clean(d)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def confusion_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted"] + list(self.classes))
            for c, row in zip(self.classes, self.confusion):
                w.writerow([c] + [int(v) for v in row])


def gate(value, threshold, op: str, label: str = "") -> dict:
    ops = {"<=": np.less_equal, "<": np.less, ">=": np.greater_equal, ">": np.greater}
    ok = bool(ops[op](value, threshold))
    return {"value": _clean(value), "threshold": _clean(threshold), "op": op, "passed": ok, "label": label}

