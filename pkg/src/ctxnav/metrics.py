"""Runtime quality metrics (safety, performance) and environment metrics
(narrowness, obstacle density).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from ctxnav.errors import DomainError, EmptyScan, InsufficientHistory
from ctxnav.path import Path
from ctxnav.world import LidarSpec, OccupancyGrid, Pose, lidar_scan

T_ACT = 2.0
NARROWNESS_RANGE = 1.0
NARROWNESS_SECTOR = math.radians(5.0)
OD_WINDOW = 1.0


def braking_distance(v: float, a_max: float) -> float:
    if not a_max > 0:
        raise DomainError("a_max must be positive")
    return v * v / (2.0 * a_max)


def safety(d_obs: float, d_brake: float) -> float:
    """1 outside the braking distance, otherwise the fraction of it that is still free."""
    if d_brake <= 0.0 or d_obs >= d_brake:
        return 1.0
    return max(d_obs, 0.0) / d_brake


def nearest_obstacle(scan) -> float:
    scan = np.asarray(scan, dtype=float)
    if scan.size == 0:
        raise EmptyScan("scan has no beams")
    return float(scan.min())


@lru_cache(maxsize=16)
def _side_beams(n_beams: int, sector: float) -> tuple[np.ndarray, np.ndarray]:
    angles = LidarSpec(beam_count=n_beams).angles
    return _sector_indices(angles, math.pi / 2, sector), _sector_indices(angles, -math.pi / 2, sector)


def _sector_indices(angles, center, sector):
    off = np.abs(np.angle(np.exp(1j * (angles - center))))
    idx = np.flatnonzero(off <= sector + 1e-9)
    if idx.size == 0:
        idx = np.array([int(np.argmin(off))])
    return idx


def narrowness(scan, r_width: float, range_max: float = NARROWNESS_RANGE,
               angles=None, sector: float = NARROWNESS_SECTOR) -> float:
    """Robot widths of lateral free space: (d_left + d_right) / r_width.

    Each side distance is the minimum over a small beam sector around the
    perpendicular, clamped to ``range_max``.  ``angles`` are beam angles
    relative to the heading; a full-circle scan is assumed when omitted.
    """
    if not r_width > 0:
        raise DomainError("r_width must be positive")
    scan = np.asarray(scan, dtype=float)
    if angles is None:
        left, right = _side_beams(len(scan), sector)
    else:
        angles = np.asarray(angles, dtype=float)
        left = _sector_indices(angles, math.pi / 2, sector)
        right = _sector_indices(angles, -math.pi / 2, sector)
    d_left = min(range_max, float(scan[left].min()))
    d_right = min(range_max, float(scan[right].min()))
    return (d_left + d_right) / r_width


@lru_cache(maxsize=16)
def _window_offsets(side: float, res: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, int(round(side / res)))
    c = (np.arange(n) + 0.5) * (side / n)
    fwd, lat = np.meshgrid(c, c - side / 2.0, indexing="ij")
    return fwd.ravel(), lat.ravel()


def obstacle_density(grid: OccupancyGrid, pose: Pose, window_side: float = OD_WINDOW) -> float:
    """Occupied fraction of a square window ahead of the robot.

    The window is aligned with the heading and its rear edge passes through
    the robot centre.  Samples falling off the map count as occupied.
    """
    fwd, lat = _window_offsets(float(window_side), grid.resolution)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    xs = pose.x + fwd * c - lat * s
    ys = pose.y + fwd * s + lat * c
    ix, iy = grid.cell_of(xs, ys)
    inside = (ix >= 0) & (iy >= 0) & (ix < grid.width_cells) & (iy < grid.height_cells)
    occ = np.ones(xs.shape, dtype=bool)
    occ[inside] = grid.cells[iy[inside], ix[inside]]
    return float(occ.mean())


class PathWindow:
    """Trailing ``t_act`` seconds of the actual trajectory."""

    def __init__(self, t_act: float = T_ACT):
        self.t_act = t_act
        self._buf: deque[tuple[float, Pose]] = deque()

    def push(self, t: float, pose: Pose) -> None:
        if self._buf and t <= self._buf[-1][0]:
            raise ValueError("timestamps must be strictly increasing")
        self._buf.append((t, pose))
        while t - self._buf[0][0] > self.t_act + 1e-9:
            self._buf.popleft()

    @property
    def span(self) -> float:
        return self._buf[-1][0] - self._buf[0][0] if self._buf else 0.0

    @property
    def ready(self) -> bool:
        return bool(self._buf) and self.span >= self.t_act - 1e-9

    @property
    def first(self) -> Pose:
        return self._buf[0][1]

    @property
    def last(self) -> Pose:
        return self._buf[-1][1]

    def __len__(self):
        return len(self._buf)


def project_onto_path(window: PathWindow, global_path: Path) -> float:
    """Reference distance: arc length covered on the global path by the trailing window."""
    if not window.ready:
        raise InsufficientHistory(f"window spans {window.span:.2f}s < {window.t_act}s")
    s0 = global_path.project(window.first.x, window.first.y)
    s1 = global_path.project(window.last.x, window.last.y)
    return abs(s1 - s0)


def performance(d_ref: float, v_max: float, t_act: float = T_ACT) -> float:
    t_ref = d_ref / v_max
    return min(max(t_ref / t_act, 0.0), 1.0)


@dataclass
class MetricsRecord:
    """One control tick of a mission: robot state plus the four metrics."""

    t: float
    x: float
    y: float
    theta: float
    v: float
    omega: float
    config_id: str
    d_obs: float
    safety: float
    performance: float | None
    narrowness: float
    obstacle_density: float
    event: str = "-"

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_row(self) -> list[str]:
        out = []
        for name in self.columns():
            val = getattr(self, name)
            if val is None:
                out.append("")
            elif isinstance(val, float):
                out.append(repr(val))
            else:
                out.append(str(val))
        return out

    @classmethod
    def from_row(cls, row: dict) -> MetricsRecord:
        kw = {}
        for f in fields(cls):
            raw = row[f.name]
            if f.name in ("config_id", "event"):
                kw[f.name] = raw
            elif f.name == "performance":
                kw[f.name] = float(raw) if raw != "" else None
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


class MetricsSampler:
    """Computes a MetricsRecord per tick for one mission.

    ``d_obs`` is the clearance between the robot footprint (a disc of
    diameter ``r_width``) and the nearest lidar return, so a collision
    yields safety 0.
    """

    def __init__(self, grid: OccupancyGrid, global_path: Path, r_width: float, a_max: float,
                 v_max: float, lidar: LidarSpec = LidarSpec()):
        self.grid = grid
        self.global_path = global_path
        self.r_width = r_width
        self.a_max = a_max
        self.v_max = v_max
        self.lidar = lidar
        self.window = PathWindow()
        full = lidar.beam_count == 360 and math.isclose(lidar.angular_range, 2 * math.pi)
        self._angles = None if full else lidar.angles

    def sample(self, t: float, pose: Pose, v: float, omega: float, config_id: str,
               scan=None) -> MetricsRecord:
        if scan is None:
            scan = lidar_scan(self.grid, pose, self.lidar)
        d_obs = max(nearest_obstacle(scan) - self.r_width / 2.0, 0.0)
        self.window.push(t, pose)
        perf = None
        if self.window.ready:
            perf = performance(project_onto_path(self.window, self.global_path), self.v_max)
        return MetricsRecord(
            t=t, x=pose.x, y=pose.y, theta=pose.theta, v=v, omega=omega, config_id=config_id,
            d_obs=d_obs,
            safety=safety(d_obs, braking_distance(v, self.a_max)),
            performance=perf,
            narrowness=narrowness(scan, self.r_width, angles=self._angles),
            obstacle_density=obstacle_density(self.grid, pose),
        )
