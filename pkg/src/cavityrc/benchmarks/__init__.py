"""Desk-scale experiments: sinc regression, vowel classification, memory probe."""

from .corpus import VOWELS, CorpusError, VowelDataset, VowelSample, ingest_vowel_corpus, synthetic_dataset
from .layout import GainCalibration, Layout, calibrate_gain, cavity_layout, room_layout
from .memory import MemoryProbeResult, normalized_xcorr, run_memory_probe
from .report import BenchmarkReport, confusion_matrix, gate, precision_recall
from .sinc import SincSettings, SincSweep, SincTask, run_sinc_sweep, sinc
from .vowel import MODES, VowelSettings, run_vowel_benchmark, vowel_spectra

__all__ = [
    "VOWELS", "CorpusError", "VowelDataset", "VowelSample", "ingest_vowel_corpus", "synthetic_dataset",
    "GainCalibration", "Layout", "calibrate_gain", "cavity_layout", "room_layout",
    "MemoryProbeResult", "normalized_xcorr", "run_memory_probe",
    "BenchmarkReport", "confusion_matrix", "gate", "precision_recall",
    "SincSettings", "SincSweep", "SincTask", "run_sinc_sweep", "sinc",
    "MODES", "VowelSettings", "run_vowel_benchmark", "vowel_spectra",
]
