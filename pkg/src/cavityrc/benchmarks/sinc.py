"""Scalar regression of sin(z)/z with an exponent sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..encoding import EncodingMask, encode_scalar
from ..readout import FourierSelector, bins_for_frequencies, feature_transform, fit_ridge, fourier_features
from ..wavefield import InstabilityError, SourceSpec
from .layout import Layout, calibrate_gain


def sinc(z):
    """Unnormalized sinc, sin(z)/z with sinc(0) = 1."""
    return np.sinc(np.asarray(z, dtype=float) / np.pi)


@dataclass
class SincTask:
    n_train: int = 100
    n_test: int = 50
    seed: int = 0
    zeta_range: tuple[float, float] = (-math.pi, math.pi)
    target: Callable[[np.ndarray], np.ndarray] = sinc

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("need at least one train and one test input")

    def draw(self) -> tuple[np.ndarray, np.ndarray]:
        """Train and test inputs: one seeded draw, split by position so they never share a sample."""
        rng = np.random.default_rng(self.seed)
        z = rng.uniform(*self.zeta_range, size=self.n_train + self.n_test)
        return z[: self.n_train], z[self.n_train :]


@dataclass
class SincSettings:
    duration_s: float = 0.5
    window_s: float = 0.2
    onset_s: float = 0.1
    floor_db: float | None = 80.0
    feature: str = "intensity"
    lam: float = 1e-2
    gain_fraction: float = 0.8
    calibration_bisections: int = 7


@dataclass
class SincPoint:
    exponent: float | None
    bound: float = 0.0
    gain: float = 0.0
    train_rmse: float = math.nan
    test_rmse: float = math.nan
    unstable: bool = False


@dataclass
class SincSweep:
    points: list[SincPoint]
    linear: SincPoint
    direct_linear_rmse: float
    info: dict = field(default_factory=dict)

    def stable_points(self) -> list[SincPoint]:
        return [p for p in self.points if not p.unstable]

    def best(self) -> SincPoint:
        pts = self.stable_points()
        if not pts:
            raise ValueError("every exponent was unstable")
        return min(pts, key=lambda p: p.test_rmse)

    def has_interior_minimum(self) -> bool:
        pts = self.stable_points()
        if len(pts) < 3:
            return False
        k = pts.index(self.best())
        return 0 < k < len(pts) - 1


def harmonic_selector(mask: EncodingMask, rate_hz: float, settings: SincSettings, harmonic: int = 2) -> FourierSelector:
    """Hann-tapered window at the end of each run, at ``harmonic`` x every carrier."""
    n = int(round(settings.window_s * rate_hz))
    bins = bins_for_frequencies(harmonic * mask.omega_hz, n, rate_hz)
    exact = np.allclose(bins * rate_hz / n, harmonic * mask.omega_hz)
    if not exact or bins.size != mask.n_carriers:
        raise ValueError("carrier harmonics do not fall on distinct DFT bins of the window")
    start = settings.duration_s - settings.window_s
    return FourierSelector(start, n, bins, rate_hz, taper="hann")


def sinc_drive(layout: Layout, mask: EncodingMask, zeta: float, settings: SincSettings) -> list[SourceSpec]:
    rate = layout.cavity.sample_rate_hz
    plan = encode_scalar(zeta, mask, settings.duration_s, rate)
    if settings.onset_s > 0:
        t = np.arange(plan.waveforms.shape[1]) / rate
        plan.waveforms = plan.waveforms * np.where(
            t < settings.onset_s, 0.5 - 0.5 * np.cos(np.pi * t / settings.onset_s), 1.0
        )
    return plan.to_sources(layout.cavity, layout.source_cells)


def sinc_features(layout: Layout, mask: EncodingMask, zetas: Sequence[float], settings: SincSettings) -> np.ndarray:
    """Second-harmonic intensities, (len(zetas), carriers x probes), probe-major.

    Raises :class:`InstabilityError` if any run diverges.
    """
    rate = layout.cavity.sample_rate_hz
    sel2 = harmonic_selector(mask, rate, settings, 2)
    sel1 = harmonic_selector(mask, rate, settings, 1)
    rows = []
    for z in zetas:
        recs = layout.simulate(sinc_drive(layout, mask, float(z), settings), settings.duration_s)
        x2 = fourier_features(recs, sel2)[None]
        ref = np.abs(fourier_features(recs, sel1)[None]) ** 2
        f = feature_transform(x2, settings.feature, settings.floor_db, ref)
        rows.append(f[0].T.ravel())
    return np.array(rows)


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return [(a - mu) / sd for a in (train,) + others]


def ridge_rmse(ftr, ytr, fte, yte, lam: float) -> tuple[float, float]:
    a, b = _standardize(ftr, fte)
    fit = fit_ridge(a, ytr, lam, intercept=True)
    rm = lambda f, y: float(np.sqrt(np.mean((f @ fit.weights + fit.bias - y) ** 2)))
    return rm(a, ytr), rm(b, yte)


def direct_linear_rmse(ztr, ytr, zte, yte) -> float:
    """Test RMSE of the best affine map from the scalar input itself."""
    a = np.column_stack([np.ones_like(ztr), ztr])
    coef, *_ = np.linalg.lstsq(a, ytr, rcond=None)
    return float(np.sqrt(np.mean((coef[0] + coef[1] * zte - yte) ** 2)))


def _evaluate(layout, mask, task, ztr, zte, settings, point: SincPoint) -> SincPoint:
    try:
        ftr = sinc_features(layout, mask, ztr, settings)
        fte = sinc_features(layout, mask, zte, settings)
    except InstabilityError:
        point.unstable = True
        return point
    point.train_rmse, point.test_rmse = ridge_rmse(ftr, task.target(ztr), fte, task.target(zte), settings.lam)
    return point


def run_sinc_sweep(
    layout: Layout,
    mask: EncodingMask,
    task: SincTask,
    exponents: Sequence[float],
    settings: SincSettings | None = None,
    gains: Sequence[float] | None = None,
    progress: Callable[[str], None] | None = None,
) -> SincSweep:
    """Train and test RMSE of a ridge readout for each control exponent.

    Gains default to ``settings.gain_fraction`` of the stability bound found
    with the extreme inputs; pass ``gains`` to fix them instead. An exponent
    whose runs diverge is flagged unstable and the sweep continues.
    """
    settings = settings or SincSettings()
    if any(not 1.0 <= n <= 2.0 for n in exponents):
        raise ValueError("exponents must lie in [1, 2]")
    if task.n_train < 100:
        raise ValueError("the sweep needs at least 100 training inputs")
    if gains is not None and len(gains) != len(exponents):
        raise ValueError("need one gain per exponent")
    ztr, zte = task.draw()
    say = progress or (lambda msg: None)
    linear = _evaluate(layout.linear(), mask, task, ztr, zte, settings, SincPoint(None))
    say(f"linear: test RMSE {linear.test_rmse:.4f}")
    edge = [sinc_drive(layout, mask, z, settings) for z in task.zeta_range]
    points = []
    for k, n in enumerate(exponents):
        shaped = layout.with_control(exponent=n)
        if gains is None:
            cal = calibrate_gain(shaped, edge, settings.duration_s, settings.gain_fraction,
                                 bisections=settings.calibration_bisections)
            bound, gain = cal.bound, cal.gain
        else:
            bound, gain = math.nan, float(gains[k])
        pt = _evaluate(shaped.with_control(gain=gain), mask, task, ztr, zte, settings, SincPoint(n, bound, gain))
        say(f"n={n}: gain {gain:.4g}, test RMSE {pt.test_rmse:.4f}" + (" (unstable)" if pt.unstable else ""))
        points.append(pt)
    oracle = direct_linear_rmse(ztr, task.target(ztr), zte, task.target(zte))
    return SincSweep(points, linear, oracle, {"n_train": task.n_train, "n_test": task.n_test})
