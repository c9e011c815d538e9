"""Reservoir geometries: sources, scatterers, probes and gain calibration."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..scatterers import ScattererSpec
from ..wavefield import CavitySpec, InstabilityError, ProbeSpec, Rigid, SourceSpec, run


@dataclass
class Layout:
    cavity: CavitySpec
    source_cells: list[tuple[int, int]]
    scatterers: list[ScattererSpec]
    probes: list[ProbeSpec]
    name: str = "cavity"
    invented_geometry: bool = False
    info: dict = field(default_factory=dict)

    def with_control(self, gain: float | None = None, exponent: float | None = None, enabled: bool = True) -> "Layout":
        """Copy with every scatterer set to a common gain/exponent (or switched off)."""
        scs = []
        for s in self.scatterers:
            s = replace(s, enabled=enabled)
            if gain is not None:
                s = s.with_gain(gain)
            if exponent is not None:
                s = replace(s, exponent_n=exponent)
            scs.append(s)
        return replace(self, scatterers=scs)

    def linear(self) -> "Layout":
        """Control off: scatterers present but passive with zero load."""
        return self.with_control(enabled=False)

    def simulate(self, sources: Sequence[SourceSpec], duration_s: float):
        return run(self.cavity, sources, self.probes, self.scatterers, duration_s)


def _inclusions(shape, rng, count, size, col_min):
    ny, nx = shape
    mask = np.zeros(shape, dtype=bool)
    for _ in range(count):
        i = int(rng.integers(3, ny - size - 3))
        j = int(rng.integers(col_min, nx - size - 3))
        mask[i : i + size, j : j + size] = True
    return mask


def _free_cells(rng, free: np.ndarray, count: int, col_min: int, margin: int = 3):
    ny, nx = free.shape
    cells: list[tuple[int, int]] = []
    tries = 0
    while len(cells) < count:
        tries += 1
        if tries > 100000:
            raise ValueError("could not place scatterers; cavity too crowded")
        cell = (int(rng.integers(margin, ny - margin)), int(rng.integers(col_min, nx - margin)))
        if free[cell] and cell not in cells:
            cells.append(cell)
    return cells


def cavity_layout(
    width_m: float = 2.0,
    height_m: float = 1.0,
    dx: float = 0.01,
    sample_rate_hz: float = 16000.0,
    c: float = 343.0,
    damping: float = 5.0,
    boundary=None,
    n_sources: int = 10,
    source_column: int = 2,
    n_scatterers: int = 10,
    exponent_n: float = 1.5,
    symmetry: str = "even",
    coupling: str = "velocity",
    n_inclusions: int = 15,
    inclusion_c: float = 150.0,
    inclusion_cells: int = 3,
    seed: int = 0,
    scatterer_cells: Sequence[tuple[int, int]] | None = None,
    source_cells: Sequence[tuple[int, int]] | None = None,
) -> Layout:
    """Rectangular cavity with slow inclusions standing in for the rod array.

    Sources sit evenly along the left wall; scatterers are placed at random
    free cells in the right 80% of the cavity and each carries a probe.
    """
    shape = (int(round(height_m / dx)), int(round(width_m / dx)))
    rng = np.random.default_rng(seed)
    col_min = shape[1] // 5
    rods = _inclusions(shape, rng, n_inclusions, inclusion_cells, col_min) if n_inclusions else np.zeros(shape, bool)
    c_map = np.where(rods, inclusion_c, c)
    cavity = CavitySpec(width_m, height_m, dx, c_map, damping, boundary or Rigid(), sample_rate_hz)
    ny, nx = cavity.shape
    if source_cells is None:
        source_cells = [(int((k + 0.5) * ny / n_sources), source_column) for k in range(n_sources)]
    if scatterer_cells is None:
        scatterer_cells = _free_cells(rng, ~rods, n_scatterers, col_min)
    scs = [
        ScattererSpec(cell, exponent_n, 0.0, True, 0.0, symmetry, coupling, f"s{k}")
        for k, cell in enumerate(scatterer_cells)
    ]
    probes = [ProbeSpec(s.position, s.label) for s in scs]
    return Layout(cavity, [tuple(map(int, c_)) for c_ in source_cells], scs, probes, "cavity", False,
                  {"inclusions": int(rods.sum()), "seed": seed})


def room_layout(
    width_m: float = 6.0,
    height_m: float = 4.0,
    dx: float = 0.02,
    sample_rate_hz: float = 16000.0,
    damping: float = 20.0,
    n_scatterers: int = 10,
    exponent_n: float = 1.5,
    symmetry: str = "even",
    bump_count: int = 24,
    bump_depth_cells: int = 4,
    seed: int = 0,
) -> Layout:
    """Invented room-scale geometry: lossy 2D room, corrugated walls, one corner source.

    Wall corrugation is modelled as slow, lossy bumps along the walls.
    """
    shape = (int(round(height_m / dx)), int(round(width_m / dx)))
    ny, nx = shape
    rng = np.random.default_rng(seed)
    bumps = np.zeros(shape, dtype=bool)
    for _ in range(bump_count):
        side = int(rng.integers(4))
        w = int(rng.integers(3, 12))
        d = int(rng.integers(1, bump_depth_cells + 1))
        if side in (0, 1):
            j = int(rng.integers(0, nx - w))
            rows = slice(0, d) if side == 0 else slice(ny - d, ny)
            bumps[rows, j : j + w] = True
        else:
            i = int(rng.integers(0, ny - w))
            cols = slice(0, d) if side == 2 else slice(nx - d, nx)
            bumps[i : i + w, cols] = True
    c_map = np.where(bumps, 120.0, 343.0)
    damp = np.where(bumps, 10 * damping, damping)
    cavity = CavitySpec(width_m, height_m, dx, c_map, damp, Rigid(), sample_rate_hz)
    src = [(bump_depth_cells + 3, bump_depth_cells + 3)]
    cells = _free_cells(rng, ~bumps, n_scatterers, nx // 4, margin=bump_depth_cells + 3)
    scs = [ScattererSpec(cell, exponent_n, 0.0, True, 0.0, symmetry, "velocity", f"s{k}") for k, cell in enumerate(cells)]
    probes = [ProbeSpec(s.position, s.label) for s in scs]
    return Layout(cavity, src, scs, probes, "room", True, {"bumps": int(bumps.sum()), "seed": seed})


@dataclass
class GainCalibration:
    bound: float
    gain: float
    fraction: float
    reference_peak: float
    evaluations: int


def calibrate_gain(
    layout: Layout,
    drives: Sequence[Sequence[SourceSpec]],
    duration_s: float,
    fraction: float = 0.8,
    blowup_factor: float = 100.0,
    bisections: int = 7,
    progress: Callable[[str], None] | None = None,
) -> GainCalibration:
    """Common control gain at ``fraction`` of the largest stable value.

    A gain counts as stable if every drive in ``drives`` runs without
    :class:`InstabilityError` and keeps the peak probe pressure below
    ``blowup_factor`` times the peak of the control-off run. The bound is
    bracketed by factors of 4 and refined by bisection.
    """
    lin = layout.linear()
    ref = max(max(float(np.max(np.abs(r.samples))) for r in lin.simulate(d, duration_s)) for d in drives)
    if ref == 0:
        raise ValueError("calibration drives produce no signal at the probes")
    count = 0

    def stable(g: float) -> bool:
        nonlocal count
        trial = layout.with_control(gain=g)
        for d in drives:
            count += 1
            try:
                recs = trial.simulate(d, duration_s)
            except InstabilityError:
                return False
            if max(float(np.max(np.abs(r.samples))) for r in recs) > blowup_factor * ref:
                return False
        return True

    lo, hi = 0.0, 1.0
    while stable(hi):
        lo, hi = hi, 4.0 * hi
        if hi > 1e9:
            break
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
        if progress:
            progress(f"gain bracket [{lo:.4g}, {hi:.4g}]")
    return GainCalibration(lo, fraction * lo, fraction, ref, count)
