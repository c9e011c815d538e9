"""Compiled inner loops for the leapfrog solver.

Fields are padded with one ghost cell per side. Ghosts are refreshed from
the edge cells before every update, which gives the face-mirrored (rigid,
zero normal gradient) wall.
"""

import math

import numba
import numpy as np

# law codes shared with scatterers.py
LAW_ODD = 0
LAW_EVEN = 1
LAW_LINEAR_LOAD = 2


@numba.njit(cache=True)
def _fill_ghosts(p):
    ny = p.shape[0] - 2
    nx = p.shape[1] - 2
    for j in range(1, nx + 1):
        p[0, j] = p[1, j]
        p[ny + 1, j] = p[ny, j]
    for i in range(1, ny + 1):
        p[i, 0] = p[i, 1]
        p[i, nx + 1] = p[i, nx]


@numba.njit(cache=True)
def _law(p, kind, gain, expo):
    if kind == LAW_ODD:
        if p == 0.0:
            return 0.0
        a = abs(p) ** expo
        return gain * a if p > 0.0 else -gain * a
    elif kind == LAW_EVEN:
        return gain * abs(p) ** expo
    return -gain * p


@numba.njit(cache=True)
def _sweep(a, b, lap_coef, damp_coef, ny, nx):
    for i in range(1, ny + 1):
        for j in range(1, nx + 1):
            c = b[i, j]
            lap = b[i + 1, j] + b[i - 1, j] + b[i, j + 1] + b[i, j - 1] - 4.0 * c
            o = a[i, j]
            a[i, j] = 2.0 * c - o + lap_coef[i - 1, j - 1] * lap - damp_coef[i - 1, j - 1] * (c - o)


@numba.njit(cache=True, fastmath={"reassoc", "nsz"})
def _field_sum(a, ny, nx):
    # reassociation lets this vectorize; NaN/Inf still propagate
    total = 0.0
    for i in range(1, ny + 1):
        for j in range(1, nx + 1):
            total += a[i, j]
    return total


@numba.njit(cache=True)
def leapfrog(
    p_prev,
    p_curr,
    lap_coef,
    damp_coef,
    src_cells,
    src_vals,
    sc_cells,
    sc_kind,
    sc_gain,
    sc_expo,
    sc_coef,
    sc_velocity,
    probe_cells,
    every,
    out,
    first_step,
):
    """Advance ``src_vals.shape[0]`` steps in place.

    ``p_prev``/``p_curr`` are padded fields; on return ``p_curr`` holds the
    newest field. ``src_vals`` is already multiplied by dt**2. Probe rows are
    written whenever the global step index is a multiple of ``every``.
    Returns -1 on success, otherwise the global index of the failing step.
    """
    nsteps = src_vals.shape[0]
    ny = p_curr.shape[0] - 2
    nx = p_curr.shape[1] - 2
    nsrc = src_cells.shape[0]
    nsc = sc_cells.shape[0]
    nprobe = probe_cells.shape[0]
    nout = out.shape[0]
    fb = np.zeros(nsc)
    a = p_prev
    b = p_curr
    for s in range(nsteps):
        g = first_step + s
        if g % every == 0:
            r = g // every
            if r < nout:
                for k in range(nprobe):
                    out[r, k] = b[probe_cells[k, 0] + 1, probe_cells[k, 1] + 1]
        for k in range(nsc):
            i = sc_cells[k, 0] + 1
            j = sc_cells[k, 1] + 1
            f_now = _law(b[i, j], sc_kind[k], sc_gain[k], sc_expo[k])
            if sc_velocity[k]:
                fb[k] = sc_coef[k] * (f_now - _law(a[i, j], sc_kind[k], sc_gain[k], sc_expo[k]))
            else:
                fb[k] = sc_coef[k] * f_now
        _fill_ghosts(b)
        # a (p_{t-1}) is overwritten in place with p_{t+1}
        _sweep(a, b, lap_coef, damp_coef, ny, nx)
        total = 0.0
        for k in range(nsrc):
            i = src_cells[k, 0] + 1
            j = src_cells[k, 1] + 1
            v = src_vals[s, k]
            a[i, j] += v
            total += v
        for k in range(nsc):
            i = sc_cells[k, 0] + 1
            j = sc_cells[k, 1] + 1
            a[i, j] += fb[k]
            total += fb[k]
        if not math.isfinite(total):
            return g
        if g % every == 0 and not math.isfinite(_field_sum(a, ny, nx)):
            return g
        t = a
        a = b
        b = t
    g = first_step + nsteps
    if g % every == 0:
        r = g // every
        if r < nout:
            for k in range(nprobe):
                out[r, k] = b[probe_cells[k, 0] + 1, probe_cells[k, 1] + 1]
    if nsteps % 2 == 1:
        # newest field sits in the caller's p_prev buffer
        for i in range(ny + 2):
            for j in range(nx + 2):
                t2 = p_prev[i, j]
                p_prev[i, j] = p_curr[i, j]
                p_curr[i, j] = t2
    return -1


def empty_cells():
    return np.zeros((0, 2), dtype=np.int64)
