"""Compiled inner loops for grid traversal.

Grids are passed as uint8 arrays indexed ``[iy, ix]`` with ``iy = 0`` at the
bottom of the map.  Cells outside the array count as occupied.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _blocked(cells, ix, iy):
    h, w = cells.shape
    if ix < 0 or iy < 0 or ix >= w or iy >= h:
        return True
    return cells[iy, ix] != 0


@njit(cache=True)
def raycast_dda(cells, res, x, y, angle, max_range):
    ix = int(math.floor(x / res))
    iy = int(math.floor(y / res))
    if _blocked(cells, ix, iy):
        return 0.0
    dx = math.cos(angle)
    dy = math.sin(angle)
    inf = np.inf
    # direction components below 1e-12 snap to zero: such rays run along the axis
    if dx > 1e-12:
        step_x = 1
        t_max_x = ((ix + 1) * res - x) / dx
        t_delta_x = res / dx
    elif dx < -1e-12:
        step_x = -1
        t_max_x = (x - ix * res) / -dx
        t_delta_x = res / -dx
    else:
        step_x = 0
        t_max_x = inf
        t_delta_x = inf
    if dy > 1e-12:
        step_y = 1
        t_max_y = ((iy + 1) * res - y) / dy
        t_delta_y = res / dy
    elif dy < -1e-12:
        step_y = -1
        t_max_y = (y - iy * res) / -dy
        t_delta_y = res / -dy
    else:
        step_y = 0
        t_max_y = inf
        t_delta_y = inf

    while True:
        if abs(t_max_x - t_max_y) <= 1e-12:
            # ray crosses a cell corner: test both side cells as well
            t = t_max_x
            if t >= max_range:
                return max_range
            if _blocked(cells, ix + step_x, iy) or _blocked(cells, ix, iy + step_y):
                return t
            ix += step_x
            iy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            t = t_max_x
            if t >= max_range:
                return max_range
            ix += step_x
            t_max_x += t_delta_x
        else:
            t = t_max_y
            if t >= max_range:
                return max_range
            iy += step_y
            t_max_y += t_delta_y
        if _blocked(cells, ix, iy):
            return t


@njit(cache=True)
def raycast_fan(cells, res, x, y, angles, max_range):
    out = np.empty(angles.shape[0])
    for i in range(angles.shape[0]):
        out[i] = raycast_dda(cells, res, x, y, angles[i], max_range)
    return out


@njit(cache=True)
def disc_hits(cells, res, x, y, radius):
    """True if a disc of ``radius`` at (x, y) touches any occupied cell."""
    lo_x = int(math.floor((x - radius) / res))
    hi_x = int(math.floor((x + radius) / res))
    lo_y = int(math.floor((y - radius) / res))
    hi_y = int(math.floor((y + radius) / res))
    r2 = radius * radius
    for iy in range(lo_y, hi_y + 1):
        cy = min(max(y, iy * res), (iy + 1) * res)
        for ix in range(lo_x, hi_x + 1):
            if not _blocked(cells, ix, iy):
                continue
            cx = min(max(x, ix * res), (ix + 1) * res)
            if (cx - x) ** 2 + (cy - y) ** 2 < r2:
                return True
    return False


@njit(cache=True)
def exact_clearance(cells, res, field, xs, ys, near):
    """Distance from each point to the nearest occupied cell square.

    ``field`` is the per-cell clearance estimate; points whose estimate
    exceeds ``near`` skip the local search and get the estimate minus one
    cell diagonal (a lower bound).  Points off the map get 0.
    """
    h, w = cells.shape
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        x = xs[k]
        y = ys[k]
        ix = int(math.floor(x / res))
        iy = int(math.floor(y / res))
        if ix < 0 or iy < 0 or ix >= w or iy >= h or cells[iy, ix] != 0:
            out[k] = 0.0
            continue
        f = field[iy, ix]
        if f > near:
            out[k] = f - 1.5 * res
            continue
        r = int(math.ceil(f / res)) + 2
        best = np.inf
        for jy in range(iy - r, iy + r + 1):
            for jx in range(ix - r, ix + r + 1):
                if not _blocked(cells, jx, jy):
                    continue
                dx = max(jx * res - x, 0.0, x - (jx + 1) * res)
                dy = max(jy * res - y, 0.0, y - (jy + 1) * res)
                d = math.sqrt(dx * dx + dy * dy)
                if d < best:
                    best = d
        out[k] = best
    return out
