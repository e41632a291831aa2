"""Global planning: A* on the robot-inflated grid plus line-of-sight shortcutting."""

from __future__ import annotations

import heapq
import math

import numpy as np
from numba import njit

from ctxnav.errors import NoPath
from ctxnav.path import Path
from ctxnav.sim.robot import RobotSpec
from ctxnav.world import OccupancyGrid, Pose

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def _astar(free, penalty, sx, sy, gx, gy):
    h, w = free.shape
    n = h * w
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    start = sy * w + sx
    goal = gy * w + gx
    g[start] = 0.0
    dxs = np.array([1, -1, 0, 0, 1, 1, -1, -1])
    dys = np.array([0, 0, 1, -1, 1, -1, 1, -1])
    costs = np.array([1.0, 1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2, SQRT2])

    def octile(x, y):
        ax = abs(x - gx)
        ay = abs(y - gy)
        return max(ax, ay) + (SQRT2 - 1.0) * min(ax, ay)

    heap = [(octile(sx, sy), 0.0, start)]
    while len(heap) > 0:
        f, neg_g, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        closed[cur] = True
        if cur == goal:
            break
        cx = cur % w
        cy = cur // w
        for k in range(8):
            nx = cx + dxs[k]
            ny = cy + dys[k]
            if nx < 0 or ny < 0 or nx >= w or ny >= h or not free[ny, nx]:
                continue
            if k >= 4 and (not free[cy, nx] or not free[ny, cx]):
                continue
            nb = ny * w + nx
            if closed[nb]:
                continue
            ng = g[cur] + costs[k] * (1.0 + penalty[ny, nx])
            if ng < g[nb] - 1e-12:
                g[nb] = ng
                parent[nb] = cur
                # prefer deeper nodes on f ties
                heapq.heappush(heap, (ng + octile(nx, ny), -ng, nb))
    if not closed[goal]:
        return np.empty(0, dtype=np.int64)
    out = [goal]
    while out[-1] != start:
        out.append(parent[out[-1]])
    res = np.empty(len(out), dtype=np.int64)
    for i in range(len(out)):
        res[i] = out[len(out) - 1 - i]
    return res


@njit(cache=True)
def _line_min_clearance(clear, res, x0, y0, x1, y1):
    h, w = clear.shape
    d = math.hypot(x1 - x0, y1 - y0)
    n = int(math.ceil(d / (0.25 * res))) + 1
    best = np.inf
    for i in range(n + 1):
        t = i / n
        ix = int(math.floor((x0 + t * (x1 - x0)) / res))
        iy = int(math.floor((y0 + t * (y1 - y0)) / res))
        if ix < 0 or iy < 0 or ix >= w or iy >= h:
            return 0.0
        best = min(best, clear[iy, ix])
    return best


@njit(cache=True)
def _line_free(free, res, x0, y0, x1, y1):
    h, w = free.shape
    d = math.hypot(x1 - x0, y1 - y0)
    n = int(math.ceil(d / (0.25 * res))) + 1
    for i in range(n + 1):
        t = i / n
        ix = int(math.floor((x0 + t * (x1 - x0)) / res))
        iy = int(math.floor((y0 + t * (y1 - y0)) / res))
        if ix < 0 or iy < 0 or ix >= w or iy >= h or not free[iy, ix]:
            return False
    return True


@njit(cache=True)
def _shortcut(clear, radius, margin, res, xs, ys, path_clear):
    """Greedy shortcutting that never brings the path closer to obstacles than it was.

    A shortcut i -> j is accepted when its clearance stays above the robot
    radius and at least min(radius + margin, clearance of the skipped cells).
    """
    n = xs.shape[0]
    keep = [0]
    i = 0
    while i < n - 1:
        j = i + 1
        floor_c = min(path_clear[i], path_clear[j])
        while j + 1 < n:
            need = max(radius, min(radius + margin, min(floor_c, path_clear[j + 1])))
            if _line_min_clearance(clear, res, xs[i], ys[i], xs[j + 1], ys[j + 1]) < need - 1e-9:
                break
            j += 1
            floor_c = min(floor_c, path_clear[j])
        keep.append(j)
        i = j
    out = np.empty(len(keep), dtype=np.int64)
    for k in range(len(keep)):
        out[k] = keep[k]
    return out


PREFERRED_MARGIN = 0.15
PROXIMITY_COST = 3.0


def inflated_free(grid: OccupancyGrid, radius: float) -> np.ndarray:
    return grid.clearance_field >= radius


def proximity_penalty(grid: OccupancyGrid, radius: float, margin: float = PREFERRED_MARGIN) -> np.ndarray:
    """Extra step cost that decays linearly from PROXIMITY_COST at contact to 0 at ``margin``."""
    gap = grid.clearance_field - radius
    return PROXIMITY_COST * np.clip(1.0 - gap / margin, 0.0, 1.0)


def global_plan(grid: OccupancyGrid, start: Pose, goal: Pose, robot: RobotSpec = RobotSpec()) -> Path:
    """8-connected A* path for the inflated robot, shortcut by line of sight.

    Step costs carry a proximity penalty (like a costmap inflation layer), so
    the path keeps a margin from obstacles wherever the free space allows.
    """
    res = grid.resolution
    if start.x == goal.x and start.y == goal.y:
        return Path([(start.x, start.y)], step=res)
    free = inflated_free(grid, robot.radius)
    (sx, gx), (sy, gy) = grid.cell_of([start.x, goal.x], [start.y, goal.y])
    for x, y in ((sx, sy), (gx, gy)):
        if not (0 <= x < grid.width_cells and 0 <= y < grid.height_cells) or not free[y, x]:
            raise NoPath(f"cell ({x}, {y}) is not free for the inflated robot")
    clear = grid.clearance_field
    direct = _line_min_clearance(clear, res, start.x, start.y, goal.x, goal.y)
    if direct >= robot.radius + PREFERRED_MARGIN:
        return Path([(start.x, start.y), (goal.x, goal.y)], step=res)
    cells = _astar(free, proximity_penalty(grid, robot.radius), int(sx), int(sy), int(gx), int(gy))
    if cells.size == 0:
        raise NoPath("start and goal are disconnected")
    w = grid.width_cells
    xs = (cells % w + 0.5) * res
    ys = (cells // w + 0.5) * res
    xs[0], ys[0], xs[-1], ys[-1] = start.x, start.y, goal.x, goal.y
    path_clear = clear.ravel()[cells]
    keep = _shortcut(clear, robot.radius, PREFERRED_MARGIN, res, xs, ys, path_clear)
    return Path(np.column_stack([xs[keep], ys[keep]]), step=res)


def plan_route(grid: OccupancyGrid, waypoints: list[Pose], robot: RobotSpec = RobotSpec()) -> Path:
    """Concatenate global plans between consecutive waypoints."""
    pts = [(waypoints[0].x, waypoints[0].y)]
    for a, b in zip(waypoints, waypoints[1:]):
        leg = global_plan(grid, a, b, robot)
        pts.extend(map(tuple, leg.xy[1:]))
    return Path(pts, step=grid.resolution)
