"""2D scalar acoustic FDTD solver written as a reservoir recurrence.

The state after ``s`` updates is the pair ``(p_next, p_curr)`` of the two
newest pressure fields, and one update is

    p_new = 2 p_next - p_curr + dt^2 c^2 lap(p_next)
            - dt * damping * (p_next - p_curr) + dt^2 (source + feedback)

with a 5-point Laplacian. Walls are rigid (zero normal gradient via
face-mirrored ghost cells); the absorbing option adds a graded loss sponge
in front of those walls.

Example:
    >>> cav = CavitySpec(width_m=0.5, height_m=0.25, dx=0.01)
    >>> dt = derive_timestep(cav)
    >>> src = SourceSpec((12, 20), np.hanning(32))
    >>> recs = run(cav, [src], [ProbeSpec((12, 30), "mic")], duration_s=0.01)
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

import numpy as np
import scipy.sparse as sp

from . import _kernels

if TYPE_CHECKING:
    from .scatterers import ScattererSpec

Cell = tuple[int, int]


class InstabilityError(RuntimeError):
    """The field stopped being finite (or blew past a stability threshold)."""

    def __init__(self, step_index: int, message: str | None = None):
        self.step_index = int(step_index)
        super().__init__(message or f"non-finite pressure field at step {self.step_index}")


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class Rigid:
    """Perfectly reflecting walls."""


@dataclass(frozen=True)
class Absorbing:
    """Graded-loss sponge of ``layer_cells`` cells, quadratic up to ``max_sigma`` (1/s)."""

    layer_cells: int = 20
    max_sigma: float = 2000.0

    def __post_init__(self):
        if self.layer_cells < 1 or self.max_sigma < 0:
            raise ValueError("absorbing layer needs layer_cells >= 1 and max_sigma >= 0")


Boundary = Union[Rigid, Absorbing]


@dataclass
class CavitySpec:
    width_m: float
    height_m: float
    dx: float
    c_map: float | np.ndarray = 343.0
    damping_map: float | np.ndarray = 0.0
    boundary: Boundary = field(default_factory=Rigid)
    sample_rate_hz: float = 16000.0

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0 and self.dx > 0):
            raise ValueError("width_m, height_m and dx must be positive")
        ny, nx = self.shape
        if ny < 8 or nx < 8:
            raise ValueError(f"grid {ny}x{nx} is smaller than 8 cells on a side")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.c_map = self._as_field(self.c_map, "c_map")
        self.damping_map = self._as_field(self.damping_map, "damping_map")
        if np.any(self.c_map <= 0):
            raise ValueError("c_map must be positive everywhere")
        if np.any(self.damping_map < 0):
            raise ValueError("damping_map must be non-negative")

    def _as_field(self, value, name: str) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            arr = np.full(self.shape, float(arr))
        if arr.shape != self.shape:
            raise ValueError(f"{name} has shape {arr.shape}, grid is {self.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} must be finite")
        return arr

    @property
    def shape(self) -> tuple[int, int]:
        return int(round(self.height_m / self.dx)), int(round(self.width_m / self.dx))

    @property
    def c_max(self) -> float:
        return float(np.max(self.c_map))

    def loss_field(self) -> np.ndarray:
        """Damping map plus the sponge profile of an absorbing boundary."""
        loss = self.damping_map.copy()
        if isinstance(self.boundary, Absorbing):
            ny, nx = self.shape
            n = self.boundary.layer_cells
            ii, jj = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
            wall = np.minimum.reduce([ii, jj, ny - 1 - ii, nx - 1 - jj]).astype(float)
            depth = np.clip((n - wall) / n, 0.0, 1.0)
            loss += self.boundary.max_sigma * depth**2
        return loss

    def contains(self, cell: Cell) -> bool:
        ny, nx = self.shape
        return 0 <= cell[0] < ny and 0 <= cell[1] < nx

    def cell_of(self, x_m: float, y_m: float) -> Cell:
        """Grid cell (row, col) containing the point (x, y) in meters."""
        return int(math.floor(y_m / self.dx)), int(math.floor(x_m / self.dx))


@dataclass
class SourceSpec:
    """Point source; ``waveform`` is in source-term units (Pa/s^2).

    The waveform is sampled at ``rate_hz`` (the cavity sample rate when None)
    and linearly interpolated onto solver steps.
    """

    position: Cell
    waveform: np.ndarray
    delay_s: float = 0.0
    rate_hz: float | None = None

    def __post_init__(self):
        self.position = (int(self.position[0]), int(self.position[1]))
        self.waveform = np.asarray(self.waveform, dtype=float).ravel()
        if not np.all(np.isfinite(self.waveform)):
            raise ValueError("source waveform must be finite")
        if self.delay_s < 0:
            raise ValueError("delay_s must be >= 0")


@dataclass
class ProbeSpec:
    position: Cell
    label: str

    def __post_init__(self):
        self.position = (int(self.position[0]), int(self.position[1]))


@dataclass
class ProbeRecord:
    label: str
    samples: np.ndarray
    sample_rate_hz: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.sample_rate_hz


@dataclass
class ReservoirState:
    """``p_next`` is the newest field, ``p_curr`` the one before it."""

    p_next: np.ndarray
    p_curr: np.ndarray
    step_index: int = 0

    @classmethod
    def zeros(cls, spec: CavitySpec) -> "ReservoirState":
        return cls(np.zeros(spec.shape), np.zeros(spec.shape), 0)

    def reversed(self) -> "ReservoirState":
        """Swap the two time levels (runs the lossless recurrence backwards)."""
        return ReservoirState(self.p_curr.copy(), self.p_next.copy(), self.step_index)


def derive_timestep(spec: CavitySpec, cfl_number: float = 0.95, snap: bool = True) -> float:
    """CFL-limited step ``cfl * dx / (c_max sqrt 2)``.

    With ``snap`` the step is shrunk to the largest exact divisor of the
    probe sampling interval, so every output sample lands on a solver step.
    """
    if not 0.0 < cfl_number <= 1.0:
        raise ValueError(f"cfl_number must lie in (0, 1], got {cfl_number}")
    dt = cfl_number * spec.dx / (spec.c_max * math.sqrt(2.0))
    if not snap:
        return dt
    interval = 1.0 / spec.sample_rate_hz
    return interval / math.ceil(interval / dt * (1 - 1e-12))


def substeps(spec: CavitySpec, dt: float) -> int:
    """Solver steps per output sample."""
    k = spec.sample_rate_hz * dt
    n = int(round(1.0 / k))
    if abs(n * k - 1.0) > 1e-3:
        raise ValueError(f"dt={dt} does not divide the sampling interval")
    return n


def laplacian(p: np.ndarray) -> np.ndarray:
    """5-point Laplacian (without the 1/dx^2) with rigid face-mirrored walls."""
    q = np.pad(p, 1, mode="edge")
    return q[2:, 1:-1] + q[:-2, 1:-1] + q[1:-1, 2:] + q[1:-1, :-2] - 4.0 * p


def step(
    state: ReservoirState,
    spec: CavitySpec,
    dt: float,
    source: np.ndarray | None = None,
    feedback: np.ndarray | None = None,
) -> ReservoirState:
    """One explicit update in plain NumPy.

    ``source`` and ``feedback`` are per-cell source-term fields (Pa/s^2).
    The compiled :func:`run` is the production path; this is the readable
    reference it is checked against.
    """
    p, p_old = state.p_next, state.p_curr
    coef = (spec.c_map * dt / spec.dx) ** 2
    new = 2.0 * p - p_old + coef * laplacian(p) - dt * spec.loss_field() * (p - p_old)
    if source is not None:
        new = new + dt * dt * source
    if feedback is not None:
        new = new + dt * dt * feedback
    if not np.all(np.isfinite(new)):
        raise InstabilityError(state.step_index)
    return ReservoirState(new, p.copy(), state.step_index + 1)


def total_energy(state: ReservoirState, spec: CavitySpec, dt: float) -> float:
    """Discrete acoustic energy (up to the factor 1/rho).

    Kinetic part from the time difference of the two levels, potential part
    as the product of gradients at both levels, which is the form the
    leapfrog scheme conserves exactly in a lossless cavity.
    """
    a, b = state.p_next, state.p_curr
    kinetic = 0.5 * np.sum(((a - b) / dt) ** 2 / spec.c_map**2)
    gx = np.sum(np.diff(a, axis=1) * np.diff(b, axis=1))
    gy = np.sum(np.diff(a, axis=0) * np.diff(b, axis=0))
    potential = 0.5 * (gx + gy) / spec.dx**2
    return float((kinetic + potential) * spec.dx**2)


def recurrence_matrices(
    spec: CavitySpec, dt: float, source_cells: Sequence[Cell] = ()
) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Explicit sparse operators of the linear recurrence h_t = Qc h_{t-1} + Qi x_t.

    ``h`` stacks the flattened (newest, previous) fields; ``x`` holds one
    source-term value per entry of ``source_cells``.
    """
    ny, nx = spec.shape
    n = ny * nx
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, vals = [], [], []
    # a missing neighbour (wall) contributes nothing: face-mirrored ghost
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src = idx[max(0, -di) : ny - max(0, di), max(0, -dj) : nx - max(0, dj)].ravel()
        nb = idx[max(0, di) : ny - max(0, -di), max(0, dj) : nx - max(0, -dj)].ravel()
        rows += [src, src]
        cols += [nb, src]
        vals += [np.ones(src.size), -np.ones(src.size)]
    lap = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    coef = sp.diags(((spec.c_map * dt / spec.dx) ** 2).ravel())
    loss = sp.diags(dt * spec.loss_field().ravel())
    eye = sp.identity(n, format="csr")
    top = sp.hstack([2.0 * eye + coef @ lap - loss, -eye + loss])
    bottom = sp.hstack([eye, sp.csr_matrix((n, n))])
    qc = sp.vstack([top, bottom]).tocsr()
    g = sp.csr_matrix(
        (np.ones(len(source_cells)), ([idx[c] for c in source_cells], np.arange(len(source_cells)))),
        shape=(n, len(source_cells)),
    )
    qi = (dt * dt) * sp.vstack([g, sp.csr_matrix((n, len(source_cells)))]).tocsr()
    return qc, qi


def _source_matrix(spec: CavitySpec, sources: Sequence[SourceSpec], dt: float, nsteps: int) -> np.ndarray:
    t = np.arange(nsteps) * dt
    vals = np.zeros((nsteps, len(sources)))
    for k, s in enumerate(sources):
        rate = s.rate_hz or spec.sample_rate_hz
        if s.waveform.size == 0:
            continue
        pos = (t - s.delay_s) * rate
        vals[:, k] = np.interp(pos, np.arange(s.waveform.size), s.waveform, left=0.0, right=0.0)
    return vals * dt * dt


def check_placements(
    spec: CavitySpec,
    sources: Sequence[SourceSpec],
    probes: Sequence[ProbeSpec],
    scatterers: Sequence["ScattererSpec"] = (),
) -> None:
    for s in sources:
        if not spec.contains(s.position):
            raise PlacementError(f"source at {s.position} is outside the {spec.shape} grid")
    for p in probes:
        if not spec.contains(p.position):
            raise PlacementError(f"probe {p.label!r} at {p.position} is outside the {spec.shape} grid")
    src_cells = {s.position for s in sources}
    for sc in scatterers:
        if not spec.contains(sc.position):
            raise PlacementError(f"scatterer at {sc.position} is outside the {spec.shape} grid")
        if sc.position in src_cells:
            raise PlacementError(f"scatterer and source share cell {sc.position}")


def record_length(spec: CavitySpec, duration_s: float) -> int:
    return int(math.ceil(duration_s * spec.sample_rate_hz - 1e-9))


def run(
    spec: CavitySpec,
    sources: Sequence[SourceSpec],
    probes: Sequence[ProbeSpec],
    scatterers: Sequence["ScattererSpec"] = (),
    duration_s: float = 0.1,
    cfl_number: float = 0.95,
    initial_state: ReservoirState | None = None,
    return_state: bool = False,
):
    """Simulate ``duration_s`` seconds and return one record per probe.

    Scatterer feedback is evaluated from the current field each step. Raises
    :class:`InstabilityError` when the field stops being finite. With
    ``return_state`` the final :class:`ReservoirState` is returned as well.
    """
    from .scatterers import kernel_arrays

    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    check_placements(spec, sources, probes, scatterers)
    dt = derive_timestep(spec, cfl_number)
    every = substeps(spec, dt)
    nrec = record_length(spec, duration_s)
    nsteps = max(int(math.ceil(duration_s / dt - 1e-9)), (nrec - 1) * every)

    ny, nx = spec.shape
    a = np.zeros((ny + 2, nx + 2))
    b = np.zeros((ny + 2, nx + 2))
    first = 0
    if initial_state is not None:
        b[1:-1, 1:-1] = initial_state.p_next
        a[1:-1, 1:-1] = initial_state.p_curr
        first = initial_state.step_index
    lap_coef = np.ascontiguousarray((spec.c_map * dt / spec.dx) ** 2)
    damp_coef = np.ascontiguousarray(dt * spec.loss_field())
    src_cells = np.array([s.position for s in sources], dtype=np.int64).reshape(-1, 2)
    src_vals = np.ascontiguousarray(_source_matrix(spec, sources, dt, nsteps))
    sc = kernel_arrays(scatterers, spec, dt)
    probe_cells = np.array([p.position for p in probes], dtype=np.int64).reshape(-1, 2)
    out = np.zeros((nrec, len(probes)))

    status = _kernels.leapfrog(
        a, b, lap_coef, damp_coef, src_cells, src_vals, *sc, probe_cells, every, out, 0
    )
    if status >= 0:
        raise InstabilityError(first + status)
    records = [ProbeRecord(p.label, out[:, k].copy(), spec.sample_rate_hz) for k, p in enumerate(probes)]
    if return_state:
        state = ReservoirState(b[1:-1, 1:-1].copy(), a[1:-1, 1:-1].copy(), first + nsteps)
        return records, state
    return records
