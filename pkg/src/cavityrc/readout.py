"""Trainable decision layer on probe signals.

Features are selected DFT coefficients of a window of every probe record,
``F_s X`` with ``X`` holding one probe per column. Downstream they are either
kept as real/imaginary parts (then the whole readout is linear in the raw
samples and :func:`compose_weights` folds it into one matrix) or reduced to
magnitudes or intensities, normalized per frequency band, optionally
projected with PCA, and fed to ridge regression or a linear SVM.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from .wavefield import ProbeRecord

SCHEMA_VERSION = 1
_MAGIC = b"CRCM"


@dataclass
class FourierSelector:
    window_start_s: float
    window_len_samples: int
    selected_bins: Sequence[int]
    sample_rate_hz: float
    taper: Literal["rect", "hann"] = "rect"

    def __post_init__(self):
        self.selected_bins = np.asarray(self.selected_bins, dtype=np.int64).ravel()
        n = self.window_len_samples
        if n < 1:
            raise ValueError("window_len_samples must be >= 1")
        b = self.selected_bins
        if b.size and (b.min() < 0 or b.max() > n - 1):
            raise ValueError(f"selected bins must lie in [0, {n - 1}]")
        if np.any(np.diff(b) <= 0):
            raise ValueError("selected bins must be strictly increasing")
        if self.taper not in ("rect", "hann"):
            raise ValueError(f"unknown taper {self.taper!r}")

    @property
    def start_index(self) -> int:
        return int(round(self.window_start_s * self.sample_rate_hz))

    @property
    def bin_hz(self) -> np.ndarray:
        return self.selected_bins * self.sample_rate_hz / self.window_len_samples

    def window(self) -> np.ndarray:
        n = self.window_len_samples
        return np.hanning(n) if self.taper == "hann" else np.ones(n)

    def matrix(self) -> np.ndarray:
        """``F_s``: the selected rows of the DFT matrix (taper folded in)."""
        n = self.window_len_samples
        k = np.arange(n)
        return np.exp(-2j * np.pi * np.outer(self.selected_bins, k) / n) * self.window()

    def to_dict(self) -> dict:
        return {
            "window_start_s": self.window_start_s,
            "window_len_samples": self.window_len_samples,
            "selected_bins": self.selected_bins.tolist(),
            "sample_rate_hz": self.sample_rate_hz,
            "taper": self.taper,
        }


def band_bins(lo_hz: float, hi_hz: float, n: int, rate_hz: float) -> np.ndarray:
    """Half-open bin range ``[round(lo n/fs), round(hi n/fs))``."""
    return np.arange(int(round(lo_hz * n / rate_hz)), int(round(hi_hz * n / rate_hz)))


def bins_for_frequencies(freqs_hz, n: int, rate_hz: float) -> np.ndarray:
    b = np.rint(np.asarray(freqs_hz, dtype=float) * n / rate_hz).astype(np.int64)
    return np.unique(b)


def windowed(records: Sequence[ProbeRecord], selector: FourierSelector) -> np.ndarray:
    """Window samples of every record as columns of ``X`` (n x probes)."""
    lengths = {len(r.samples) for r in records}
    if len(lengths) != 1:
        raise ValueError(f"records have different lengths {sorted(lengths)}")
    rates = {r.sample_rate_hz for r in records}
    if len(rates) != 1 or abs(rates.pop() - selector.sample_rate_hz) > 1e-9:
        raise ValueError("record sample rate does not match the selector")
    i0 = selector.start_index
    n = selector.window_len_samples
    if i0 < 0 or i0 + n > lengths.pop():
        raise ValueError("analysis window falls outside the records")
    return np.stack([r.samples[i0 : i0 + n] for r in records], axis=1)


def fourier_features(records: Sequence[ProbeRecord], selector: FourierSelector) -> np.ndarray:
    """Complex ``F_s X``, one row per selected bin and one column per probe."""
    x = windowed(records, selector) * selector.window()[:, None]
    return np.fft.fft(x, axis=0)[selector.selected_bins, :]


def realify(z: np.ndarray) -> np.ndarray:
    """``vec`` of a complex bins x probes block, re/im interleaved per bin."""
    zv = np.asarray(z).reshape(z.shape[:-2] + (-1,), order="F") if z.ndim == 2 else _vec_batch(z)
    out = np.empty(zv.shape[:-1] + (2 * zv.shape[-1],))
    out[..., 0::2] = zv.real
    out[..., 1::2] = zv.imag
    return out


def _vec_batch(z: np.ndarray) -> np.ndarray:
    # (samples, bins, probes) -> (samples, bins*probes) column-major per sample
    return np.swapaxes(z, 1, 2).reshape(z.shape[0], -1)


# ---------------------------------------------------------------- band norms


@dataclass
class BandNorm:
    lo_hz: float
    hi_hz: float
    min: float
    max: float

    def as_tuple(self):
        return (self.lo_hz, self.hi_hz, self.min, self.max)


def _band_masks(bin_hz: np.ndarray, bands):
    bands = sorted(bands)
    for (a_lo, a_hi), (b_lo, _) in zip(bands, bands[1:]):
        if b_lo < a_hi:
            raise ValueError(f"bands ({a_lo}, {a_hi}) and ({b_lo}, ...) overlap")
    return [(lo, hi, (bin_hz >= lo) & (bin_hz < hi)) for lo, hi in bands]


def fit_band_norms(magnitudes: np.ndarray, bin_hz: np.ndarray, bands) -> list[BandNorm]:
    """Training-set min/max of (samples, bins, probes) magnitudes per band."""
    out = []
    for lo, hi, m in _band_masks(np.asarray(bin_hz), bands):
        vals = magnitudes[:, m]
        if vals.size == 0:
            raise ValueError(f"band {lo}-{hi} Hz holds no selected bin")
        out.append(BandNorm(lo, hi, float(vals.min()), float(vals.max())))
    return out


def apply_band_norms(magnitudes: np.ndarray, bin_hz: np.ndarray, norms: Sequence[BandNorm]) -> np.ndarray:
    """Affine map of each band onto [0, 1] with stored statistics.

    Bins outside every band are dropped. A band with max == min maps to 0.5.
    """
    bin_hz = np.asarray(bin_hz)
    out = np.full(magnitudes.shape, np.nan)
    keep = np.zeros(bin_hz.shape, dtype=bool)
    for nrm in norms:
        m = (bin_hz >= nrm.lo_hz) & (bin_hz < nrm.hi_hz)
        keep |= m
        span = nrm.max - nrm.min
        if span == 0:
            warnings.warn(f"band {nrm.lo_hz}-{nrm.hi_hz} Hz is constant; mapped to 0.5", stacklevel=2)
            out[:, m] = 0.5
        else:
            out[:, m] = (magnitudes[:, m] - nrm.min) / span
    return out[:, keep]


def band_minmax(features: np.ndarray, bin_hz: np.ndarray, bands, norms: Sequence[BandNorm] | None = None):
    """Magnitudes of complex (samples, bins, probes) features, Min-Max scaled per band.

    Statistics are fitted on ``features`` unless ``norms`` is given. Returns
    ``(normalized, norms)``.
    """
    mags = np.abs(features)
    if norms is None:
        norms = fit_band_norms(mags, bin_hz, bands)
    return apply_band_norms(mags, bin_hz, norms), list(norms)


# ---------------------------------------------------------------------- PCA


@dataclass
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean

    def explained_fraction(self) -> float:
        s2 = self.singular_values**2
        return float(s2[: self.k].sum() / s2.sum())


def fit_pca(features: np.ndarray, k: int) -> PCAProjection:
    """Top-k right singular vectors of the mean-centred data."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs a 2D array with at least 2 samples")
    if not 1 <= k <= min(x.shape):
        raise ValueError(f"k={k} outside [1, {min(x.shape)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    flip[flip == 0] = 1.0
    return PCAProjection(mean, vt[:k] * flip[:k, None], s)


# -------------------------------------------------------------------- ridge


@dataclass
class RidgeFit:
    weights: np.ndarray
    bias: np.ndarray | float = 0.0


def fit_ridge(features: np.ndarray, targets: np.ndarray, lam: float, intercept: bool = False) -> RidgeFit:
    """Solve ``(X^T X + lam I) W = X^T y`` with a symmetric solver.

    With ``intercept`` the data are centred first and the bias is left
    unpenalized.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if intercept:
        xm, ym = x.mean(axis=0), y.mean(axis=0)
        x, y = x - xm, y - ym
    gram = x.T @ x
    if lam > 0:
        gram = gram + lam * np.eye(gram.shape[0])
    rhs = x.T @ y
    singular = lam == 0 and (x.shape[0] < x.shape[1] or np.linalg.matrix_rank(x) < x.shape[1])
    if singular:
        raise np.linalg.LinAlgError("normal equations are singular; use lam > 0")
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            w = scipy.linalg.solve(gram, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise np.linalg.LinAlgError(f"normal equations are singular ({exc}); use lam > 0") from None
    bias = (ym - xm @ w) if intercept else 0.0
    return RidgeFit(w, bias)


# ---------------------------------------------------------------------- SVM


@dataclass
class SVMFit:
    weights: np.ndarray  # classes x features
    bias: np.ndarray
    objective: list[float] = field(default_factory=list)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weights.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)


def _ovr_objective(w, b, x, ysign, lam):
    margins = 1.0 - ysign * (x @ w.T + b)
    return float(0.5 * lam * np.sum(w * w) + np.mean(np.maximum(margins, 0.0), axis=0).sum())


def fit_linear_svm(
    features: np.ndarray,
    labels: np.ndarray,
    c_reg: float = 1.0,
    epochs: int = 200,
    seed: int = 0,
    n_classes: int | None = None,
) -> SVMFit:
    """One-vs-rest hinge-loss SVM trained by averaged stochastic subgradient.

    Each class minimizes ``lam/2 |w|^2 + mean(hinge)`` with
    ``lam = 1 / (c_reg * N)``, using Pegasos steps ``1/(lam t)`` with a
    projection onto the ball of radius ``1/sqrt(lam)``, over a seeded
    permutation per epoch. Candidates are the per-epoch averages of the
    iterates; a candidate replaces the current model only when it lowers the
    training objective, so the recorded objective never increases.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    classes = int(n_classes if n_classes is not None else y.max() + 1)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes")
    n, d = x.shape
    lam = 1.0 / (c_reg * n)
    radius = 1.0 / np.sqrt(lam)
    ysign = np.where(y[:, None] == np.arange(classes)[None, :], 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros((classes, d))
    b = np.zeros(classes)
    best_w, best_b = w.copy(), b.copy()
    history = [_ovr_objective(w, b, x, ysign, lam)]
    t = 0
    for _ in range(epochs):
        w_avg = np.zeros_like(w)
        b_avg = np.zeros_like(b)
        for j, i in enumerate(rng.permutation(n), start=1):
            t += 1
            eta = 1.0 / (lam * (t + 1))
            viol = ysign[i] * (w @ x[i] + b) < 1.0
            w *= 1.0 - eta * lam
            w[viol] += eta * ysign[i, viol, None] * x[i]
            # bias is unregularized; a damped step keeps it from dominating early on
            b[viol] += eta * ysign[i, viol] / np.sqrt(t)
            norms = np.sqrt(np.sum(w * w, axis=1) + b * b)
            shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            w *= shrink[:, None]
            b *= shrink
            w_avg += (w - w_avg) / j
            b_avg += (b - b_avg) / j
        obj = _ovr_objective(w_avg, b_avg, x, ysign, lam)
        if obj <= history[-1]:
            best_w, best_b = w_avg, b_avg
            history.append(obj)
        else:
            history.append(history[-1])
    return SVMFit(best_w, best_b, history)


# ------------------------------------------------------------- readout model


@dataclass
class ReadoutModel:
    """Full decision layer from probe records to outputs.

    ``feature_kind`` is ``"complex"`` (re/im of ``F_s X``), ``"magnitude"``
    or ``"intensity"`` (squared magnitude). ``floor_db`` zeroes intensities
    more than that many dB below the strongest ``reference_bins`` coefficient
    of the same probe, mimicking a sensor's dynamic range.
    """

    selector: FourierSelector
    weights: np.ndarray
    bias: np.ndarray
    kind: Literal["ridge", "linear_svm"] = "ridge"
    feature_kind: Literal["complex", "magnitude", "intensity"] = "complex"
    band_norms: list[BandNorm] | None = None
    pca: PCAProjection | None = None
    scaler: tuple[np.ndarray, np.ndarray] | None = None
    floor_db: float | None = None
    reference_bins: np.ndarray | None = None
    classes: list[str] | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if self.pca is not None:
            c = self.pca.components
            if not np.allclose(c @ c.T, np.eye(c.shape[0]), atol=1e-8):
                raise ValueError("PCA components are not orthonormal")
            if self.weights.shape[1] != self.pca.k:
                raise ValueError("weights do not match the PCA dimension")
        if self.bias.size != self.weights.shape[0]:
            raise ValueError("need one bias per output")

    @property
    def n_parameters(self) -> int:
        return int(self.weights.size + self.bias.size)

    def raw_features(self, records_batch) -> np.ndarray:
        """Features before band normalization/PCA for a list of record lists."""
        z = np.stack([fourier_features(r, self.selector) for r in records_batch])
        return feature_transform(z, self.feature_kind, self.floor_db, self._reference(records_batch))

    def _reference(self, records_batch):
        if self.floor_db is None or self.reference_bins is None:
            return None
        ref_sel = FourierSelector(
            self.selector.window_start_s,
            self.selector.window_len_samples,
            self.reference_bins,
            self.selector.sample_rate_hz,
            self.selector.taper,
        )
        return np.stack([np.abs(fourier_features(r, ref_sel)) ** 2 for r in records_batch])

    def transform(self, raw: np.ndarray) -> np.ndarray:
        x = raw
        if self.band_norms is not None:
            x = apply_band_norms(x, self.selector.bin_hz, self.band_norms)
        x = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        if self.scaler is not None:
            x = (x - self.scaler[0]) / self.scaler[1]
        if self.pca is not None:
            x = self.pca.transform(x)
        return x

    def decision(self, raw: np.ndarray) -> np.ndarray:
        return self.transform(raw) @ self.weights.T + self.bias

    def predict(self, records_batch) -> np.ndarray:
        out = self.decision(self.raw_features(records_batch))
        if self.kind == "linear_svm":
            return np.argmax(out, axis=1)
        return out[:, 0] if out.shape[1] == 1 else out

    def save(self, path: str | Path) -> None:
        save_model(self, path)


def feature_transform(z: np.ndarray, kind: str, floor_db: float | None = None, reference=None) -> np.ndarray:
    """Map complex (samples, bins, probes) coefficients to real features."""
    if kind == "complex":
        return realify(z)
    if kind == "magnitude":
        return np.abs(z)
    if kind == "intensity":
        inten = np.abs(z) ** 2
        if floor_db is not None and reference is not None:
            ref = reference.max(axis=1, keepdims=True)
            inten = np.where(inten < ref * 10 ** (-floor_db / 10), 0.0, inten)
        return inten
    raise ValueError(f"unknown feature kind {kind!r}")


def compose_weights(model: ReadoutModel) -> tuple[np.ndarray, np.ndarray]:
    """Fold ``F_s``, PCA and ``W`` into one real operator on raw samples.

    Returns ``(A, c)`` with ``A @ vec(X) + c`` equal to the staged pipeline,
    where ``vec(X)`` stacks the windowed probe columns. Only defined for the
    complex-feature pipeline without band normalization, because magnitudes
    are not linear.
    """
    if model.feature_kind != "complex":
        raise ValueError(f"{model.feature_kind!r} features are nonlinear; composition needs 'complex'")
    if model.band_norms is not None:
        raise ValueError("band Min-Max acts on magnitudes; composition is undefined")
    fs = model.selector.matrix()
    n = fs.shape[1]
    r = np.empty((2 * fs.shape[0], n))
    r[0::2] = fs.real
    r[1::2] = fs.imag
    w = model.weights
    c = model.bias.copy()
    if model.pca is not None:
        w_feat = w @ model.pca.components
        c = c - w @ (model.pca.components @ model.pca.mean)
    else:
        w_feat = w
    if model.scaler is not None:
        mu, sd = model.scaler
        c = c - w_feat @ (mu / sd)
        w_feat = w_feat / sd
    n_probes = w_feat.shape[1] // r.shape[0]
    if n_probes * r.shape[0] != w_feat.shape[1]:
        raise ValueError("weights do not match the selector dimension")
    blocks = [w_feat[:, m * r.shape[0] : (m + 1) * r.shape[0]] @ r for m in range(n_probes)]
    return np.hstack(blocks), c


# -------------------------------------------------------------- persistence


def _arrays_of(model: ReadoutModel) -> dict[str, np.ndarray]:
    arrs = {"weights": model.weights, "bias": model.bias}
    if model.pca is not None:
        arrs.update(pca_mean=model.pca.mean, pca_components=model.pca.components, pca_sv=model.pca.singular_values)
    if model.scaler is not None:
        arrs.update(scaler_mean=model.scaler[0], scaler_scale=model.scaler[1])
    if model.reference_bins is not None:
        arrs["reference_bins"] = np.asarray(model.reference_bins, dtype=float)
    return arrs


def save_model(model: ReadoutModel, path: str | Path) -> None:
    """Binary container: magic, JSON header, then little-endian float64 arrays."""
    arrs = _arrays_of(model)
    offset = 0
    table = {}
    for name, a in arrs.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        table[name] = {"shape": list(a.shape), "offset": offset}
        offset += a.nbytes
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "feature_kind": model.feature_kind,
        "selector": model.selector.to_dict(),
        "bands": [b.as_tuple() for b in model.band_norms] if model.band_norms is not None else None,
        "pca_k": model.pca.k if model.pca is not None else None,
        "floor_db": model.floor_db,
        "classes": model.classes,
        "seed": model.seed,
        "meta": model.meta,
        "arrays": table,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", SCHEMA_VERSION, len(blob)))
        fh.write(blob)
        for a in arrs.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path: str | Path) -> ReadoutModel:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path} is not a readout model file")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen

    def arr(name):
        if name not in header["arrays"]:
            return None
        spec = header["arrays"][name]
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = base + spec["offset"]
        return np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(spec["shape"]).copy()

    pca = None
    if header["pca_k"] is not None:
        pca = PCAProjection(arr("pca_mean"), arr("pca_components"), arr("pca_sv"))
    scaler = None
    if "scaler_mean" in header["arrays"]:
        scaler = (arr("scaler_mean"), arr("scaler_scale"))
    ref = arr("reference_bins")
    return ReadoutModel(
        selector=FourierSelector(**header["selector"]),
        weights=arr("weights"),
        bias=arr("bias"),
        kind=header["kind"],
        feature_kind=header["feature_kind"],
        band_norms=[BandNorm(*b) for b in header["bands"]] if header["bands"] is not None else None,
        pca=pca,
        scaler=scaler,
        floor_db=header["floor_db"],
        reference_bins=ref.astype(np.int64) if ref is not None else None,
        classes=header["classes"],
        seed=header["seed"],
        meta=header["meta"],
    )
