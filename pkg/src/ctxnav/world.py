"""Occupancy-grid worlds: corridor and retail map generation, raycasting, lidar.

Coordinates are metres with the origin at the bottom-left map corner.  Cell
``(ix, iy)`` covers ``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)`` and is
stored at ``cells[iy, ix]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FsPath

import numpy as np
from scipy import ndimage

from ctxnav import _kernels
from ctxnav.errors import GenerationFailed, OutOfBounds, ParseError

DEFAULT_RESOLUTION = 0.05
WALL_THICKNESS = 0.1
MAX_LAYOUT_RETRIES = 100
# free space kept between obstacles beyond the robot width, so every gap is drivable
PASSAGE_MARGIN = 0.3

RETAIL_SIZE = (25.0, 20.0)
RETAIL_AISLES = 4
RETAIL_SHELF_X = (4.0, 21.0)
RETAIL_AREA_X = (7.0, 18.0)
# via points along each traversed aisle so the route cannot detour through an empty aisle
RETAIL_VIA_X = (5.0, 9.25, 12.5, 15.75, 20.0)


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def distance_to(self, other: Pose) -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


class OccupancyGrid:
    """Immutable boolean occupancy grid."""

    def __init__(self, cells, resolution: float = DEFAULT_RESOLUTION):
        cells = np.array(cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("cells must be a non-empty 2D array")
        if not resolution > 0:
            raise ValueError("resolution must be positive")
        cells.flags.writeable = False
        self.cells = cells
        self.resolution = float(resolution)

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> float:
        return self.width_cells * self.resolution

    @property
    def height(self) -> float:
        return self.height_cells * self.resolution

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return (f"OccupancyGrid({self.width_cells}x{self.height_cells}, "
                f"res={self.resolution}, occupied={int(self.cells.sum())})")

    @cached_property
    def u8(self) -> np.ndarray:
        return np.ascontiguousarray(self.cells, dtype=np.uint8)

    @cached_property
    def clearance_field(self) -> np.ndarray:
        """Per-cell distance (m) from the cell centre to the nearest occupied cell edge.

        The map border counts as occupied.
        """
        padded = np.pad(self.cells, 1, constant_values=True)
        dist = ndimage.distance_transform_edt(~padded)[1:-1, 1:-1] * self.resolution
        return np.maximum(dist - 0.5 * self.resolution, 0.0)

    @cached_property
    def clearance_gradient(self) -> tuple[np.ndarray, np.ndarray]:
        gy, gx = np.gradient(self.clearance_field, self.resolution)
        return gx, gy

    def cell_of(self, x, y):
        return (np.floor(np.asarray(x) / self.resolution).astype(int),
                np.floor(np.asarray(y) / self.resolution).astype(int))

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width and 0.0 <= y < self.height

    def is_occupied(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return True
        ix, iy = self.cell_of(x, y)
        return bool(self.cells[iy, ix])

    def clearance(self, xs, ys) -> np.ndarray:
        """Vectorized clearance lookup; points off the map get 0."""
        ix, iy = self.cell_of(xs, ys)
        inside = (ix >= 0) & (iy >= 0) & (ix < self.width_cells) & (iy < self.height_cells)
        out = np.zeros(np.shape(ix))
        out[inside] = self.clearance_field[iy[inside], ix[inside]]
        return out

    def exact_clearance(self, xs, ys, near: float = 1.0) -> np.ndarray:
        """Point-to-obstacle distance, exact within ``near`` of an obstacle.

        Farther points get a lower bound from the per-cell field.
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        out = _kernels.exact_clearance(self.u8, self.resolution, self.clearance_field,
                                       xs.ravel(), ys.ravel(), float(near))
        return out.reshape(xs.shape)

    def disc_collides(self, x: float, y: float, radius: float) -> bool:
        return bool(_kernels.disc_hits(self.u8, self.resolution, float(x), float(y), float(radius)))

    def with_occupied(self, mask) -> OccupancyGrid:
        """Copy with additional cells marked occupied."""
        return OccupancyGrid(self.cells | np.asarray(mask, dtype=bool), self.resolution)

    # -- .grid text format ------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{self.width_cells} {self.height_cells} {self.resolution!r}"]
        chars = np.where(self.cells[::-1], "#", ".")
        lines.extend("".join(row) for row in chars)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> OccupancyGrid:
        lines = text.splitlines()
        try:
            w, h, res = lines[0].split()
            w, h, res = int(w), int(h), float(res)
        except (IndexError, ValueError) as exc:
            raise ParseError(f"bad grid header: {exc}") from None
        rows = lines[1:1 + h]
        if len(rows) != h or any(len(r) != w for r in rows):
            raise ParseError("grid body does not match header dimensions")
        if any(set(r) - {"#", "."} for r in rows):
            raise ParseError("grid body may only contain '#' and '.'")
        cells = np.array([[c == "#" for c in r] for r in rows], dtype=bool)[::-1]
        return cls(cells, res)

    def save(self, path) -> None:
        FsPath(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> OccupancyGrid:
        return cls.loads(FsPath(path).read_text())


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parameters of a generated environment.

    For retail maps ``clutterness`` is the per-area obstacle count unless
    ``area_counts`` gives Area1/Area2 counts explicitly; ``corridor_width`` is
    the aisle width.
    """

    kind: str = "corridor"
    corridor_width: float = 3.0
    corridor_length: float = 30.0
    clutterness: int = 0
    obstacle_size: float = 0.5
    seed: int = 0
    area_counts: tuple[int, int] | None = None
    robot_width: float = 0.5
    resolution: float = DEFAULT_RESOLUTION

    def validate(self) -> None:
        if self.kind not in ("corridor", "retail"):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if not self.corridor_width > self.robot_width:
            raise ValueError("corridor_width must exceed the robot width")
        if self.clutterness < 0:
            raise ValueError("clutterness must be >= 0")
        if self.area_counts is not None and min(self.area_counts) < 0:
            raise ValueError("area counts must be >= 0")
        if not self.obstacle_size > 0 or not self.resolution > 0:
            raise ValueError("obstacle_size and resolution must be positive")
        if self.kind == "corridor" and self.corridor_length < 4 * self.robot_width + 2.0:
            raise ValueError("corridor too short")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["area_counts"] is not None:
            d["area_counts"] = list(d["area_counts"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EnvironmentSpec:
        d = dict(d)
        if d.get("area_counts") is not None:
            d["area_counts"] = tuple(d["area_counts"])
        return cls(**d)


@dataclass(frozen=True)
class LidarSpec:
    beam_count: int = 360
    angular_range: float = 2.0 * math.pi
    max_range: float = 5.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.beam_count < 8:
            raise ValueError("beam_count must be >= 8")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    @property
    def angles(self) -> np.ndarray:
        """Beam angles relative to the robot heading."""
        full = math.isclose(self.angular_range, 2.0 * math.pi)
        n = self.beam_count if full else self.beam_count - 1
        step = self.angular_range / n
        offset = 0.0 if full else -0.5 * self.angular_range
        return offset + step * np.arange(self.beam_count)


# -- raycasting -----------------------------------------------------------


def _check_origin(grid: OccupancyGrid, x: float, y: float) -> None:
    if not grid.in_bounds(x, y):
        raise OutOfBounds(f"origin ({x:.3f}, {y:.3f}) outside the grid")


def raycast(grid: OccupancyGrid, origin: Pose, angle: float, max_range: float) -> float:
    """Distance to the first occupied cell along a world-frame ray, clamped to max_range.

    Cells are half-open [k res, (k + 1) res); direction components below 1e-12
    count as zero, so a ray within that of an axis runs along it.
    """
    _check_origin(grid, origin.x, origin.y)
    return float(_kernels.raycast_dda(grid.u8, grid.resolution, float(origin.x), float(origin.y),
                                      float(angle), float(max_range)))


def lidar_scan(grid: OccupancyGrid, pose: Pose, lidar: LidarSpec = LidarSpec(),
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Ranges for ``lidar.beam_count`` beams starting at the robot heading."""
    _check_origin(grid, pose.x, pose.y)
    angles = pose.theta + lidar.angles
    ranges = _kernels.raycast_fan(grid.u8, grid.resolution, float(pose.x), float(pose.y),
                                  angles, float(lidar.max_range))
    if lidar.noise_std > 0:
        if rng is None:
            raise ValueError("a noisy lidar needs an rng")
        ranges = np.clip(ranges + rng.normal(0.0, lidar.noise_std, ranges.shape), 0.0, lidar.max_range)
    return ranges


# -- generation -----------------------------------------------------------


def _inflated_free(cells: np.ndarray, res: float, radius: float) -> np.ndarray:
    padded = np.pad(cells, 1, constant_values=True)
    dist = ndimage.distance_transform_edt(~padded)[1:-1, 1:-1] * res
    return dist > radius


def _connected(cells: np.ndarray, res: float, radius: float, points: list[Pose]) -> bool:
    free = _inflated_free(cells, res, radius)
    labels, _ = ndimage.label(free, structure=np.ones((3, 3), dtype=int))
    ids = set()
    for p in points:
        ix, iy = int(p.x // res), int(p.y // res)
        lab = labels[iy, ix]
        if lab == 0:
            return False
        ids.add(lab)
    return len(ids) == 1


def _place_boxes(rng, n, side_cells, region, taken, keepouts, res, gap_cells=1):
    """Pick ``n`` square boxes (lower-left cell indices) inside ``region``.

    ``region`` is (ix_lo, ix_hi, iy_lo, iy_hi) for the lower-left corner,
    ``taken`` holds boxes already placed, ``keepouts`` are (Pose, min_dist).
    Boxes stay at least ``gap_cells`` apart along x or y.
    Returns None when the region is too crowded.
    """
    ix_lo, ix_hi, iy_lo, iy_hi = region
    boxes = []
    for _ in range(n):
        for _attempt in range(200):
            bx = int(rng.integers(ix_lo, ix_hi + 1))
            by = int(rng.integers(iy_lo, iy_hi + 1))
            if any(abs(bx - ox) < side_cells + gap_cells and abs(by - oy) < side_cells + gap_cells
                   for ox, oy in taken + boxes):
                continue
            x0, y0 = bx * res, by * res
            x1, y1 = x0 + side_cells * res, y0 + side_cells * res
            if any(math.hypot(min(max(p.x, x0), x1) - p.x, min(max(p.y, y0), y1) - p.y) < d
                   for p, d in keepouts):
                continue
            boxes.append((bx, by))
            break
        else:
            return None
    return boxes


def _stamp(cells, boxes, side_cells):
    for bx, by in boxes:
        cells[by:by + side_cells, bx:bx + side_cells] = True


def generate_corridor(spec: EnvironmentSpec) -> tuple[OccupancyGrid, Pose, Pose]:
    """Straight walled corridor along +x with ``clutterness`` square obstacles."""
    spec.validate()
    if spec.kind != "corridor":
        raise ValueError("generate_corridor needs kind='corridor'")
    res = spec.resolution
    wall = int(round(WALL_THICKNESS / res))
    free_w = int(round(spec.corridor_width / res))
    free_l = int(round(spec.corridor_length / res))
    base = np.ones((free_w + 2 * wall, free_l + 2 * wall), dtype=bool)
    base[wall:wall + free_w, wall:wall + free_l] = False

    cy = (wall + free_w / 2) * res
    start = Pose(wall * res + 1.0, cy, 0.0)
    goal = Pose((wall + free_l) * res - 1.0, cy, 0.0)
    side = int(round(spec.obstacle_size / res))
    gap = int(math.ceil((spec.robot_width + PASSAGE_MARGIN) / res - 1e-9))
    keepouts = [(start, spec.robot_width), (goal, spec.robot_width)]
    region = (wall + 1, wall + free_l - side - 1, wall + 1, wall + free_w - side - 1)

    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_LAYOUT_RETRIES):
        boxes = _place_boxes(rng, spec.clutterness, side, region, [], keepouts, res, gap)
        if boxes is None:
            continue
        cells = base.copy()
        _stamp(cells, boxes, side)
        if _connected(cells, res, spec.robot_width / 2, [start, goal]):
            return OccupancyGrid(cells, res), start, goal
    raise GenerationFailed(f"no connected corridor layout after {MAX_LAYOUT_RETRIES} retries")


@dataclass(frozen=True)
class RetailLayout:
    """Geometry of the procedural store: aisle centre lines and the two spawn areas."""

    aisle_centers: tuple[float, ...]
    aisle_width: float
    area1: tuple[float, float, float, float]
    area2: tuple[float, float, float, float]
    extra: dict = field(default_factory=dict)


def retail_layout(spec: EnvironmentSpec) -> RetailLayout:
    W, H = RETAIL_SIZE
    aisle = spec.corridor_width
    shelf = (H - 2 * WALL_THICKNESS - RETAIL_AISLES * aisle) / (RETAIL_AISLES - 1)
    if shelf < 0.5:
        raise ValueError("aisle width too large for the retail map")
    lows = [WALL_THICKNESS + k * (aisle + shelf) for k in range(RETAIL_AISLES)]
    centers = tuple(lo + aisle / 2 for lo in lows)
    ax0, ax1 = RETAIL_AREA_X
    area1 = (ax0, ax1, lows[1], lows[1] + aisle)
    area2 = (ax0, ax1, lows[2], lows[2] + aisle)
    return RetailLayout(centers, aisle, area1, area2, {"shelf_depth": shelf, "aisle_lows": lows})


def generate_retail(spec: EnvironmentSpec) -> tuple[OccupancyGrid, list[Pose]]:
    """Store-like map: parallel shelves forming 4 aisles, obstacles spawned in Area1/Area2.

    The mission route enters aisle 1 from the left cross-aisle, drives through
    Area1, crosses over at the right end and returns through Area2.
    """
    spec.validate()
    if spec.kind != "retail":
        raise ValueError("generate_retail needs kind='retail'")
    res = spec.resolution
    W, H = RETAIL_SIZE
    layout = retail_layout(spec)
    wc, hc = int(round(W / res)), int(round(H / res))
    wall = int(round(WALL_THICKNESS / res))
    base = np.zeros((hc, wc), dtype=bool)
    base[:wall, :] = base[-wall:, :] = True
    base[:, :wall] = base[:, -wall:] = True
    sx0, sx1 = (int(round(v / res)) for v in RETAIL_SHELF_X)
    lows = layout.extra["aisle_lows"]
    for k in range(RETAIL_AISLES - 1):
        y0 = int(round((lows[k] + layout.aisle_width) / res))
        y1 = int(round(lows[k + 1] / res))
        base[y0:y1, sx0:sx1] = True

    y1c, y2c = layout.aisle_centers[1], layout.aisle_centers[2]
    waypoints = ([Pose(2.0, y1c, 0.0)] + [Pose(x, y1c, 0.0) for x in RETAIL_VIA_X]
                 + [Pose(W - 2.0, y1c, 0.0), Pose(W - 2.0, y2c, math.pi)]
                 + [Pose(x, y2c, math.pi) for x in reversed(RETAIL_VIA_X)] + [Pose(2.0, y2c, math.pi)])

    counts = spec.area_counts if spec.area_counts is not None else (spec.clutterness,) * 2
    side = int(round(spec.obstacle_size / res))
    gap = int(math.ceil((spec.robot_width + PASSAGE_MARGIN) / res - 1e-9))
    keepouts = [(p, spec.robot_width) for p in waypoints]
    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_LAYOUT_RETRIES):
        placed: list[tuple[int, int]] = []
        ok = True
        for area, n in zip((layout.area1, layout.area2), counts):
            x0, x1, y0, y1 = area
            region = (int(round(x0 / res)), int(round(x1 / res)) - side,
                      int(round(y0 / res)) + 1, int(round(y1 / res)) - side - 1)
            boxes = _place_boxes(rng, n, side, region, placed, keepouts, res, gap)
            if boxes is None:
                ok = False
                break
            placed += boxes
        if not ok:
            continue
        cells = base.copy()
        _stamp(cells, placed, side)
        if _connected(cells, res, spec.robot_width / 2, waypoints):
            return OccupancyGrid(cells, res), waypoints
    raise GenerationFailed(f"no connected retail layout after {MAX_LAYOUT_RETRIES} retries")


def generate(spec: EnvironmentSpec) -> tuple[OccupancyGrid, list[Pose]]:
    """Dispatch on ``spec.kind``; always returns (grid, waypoints)."""
    if spec.kind == "corridor":
        grid, start, goal = generate_corridor(spec)
        return grid, [start, goal]
    return generate_retail(spec)
