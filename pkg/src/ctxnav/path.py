"""Polyline paths with arc-length parametrisation."""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from ctxnav.world import Pose


class Path:
    """Ordered vertices with cumulative arc length.

    Smoothed global paths are sparse (line-of-sight shortcuts), so
    projection queries run against a copy resampled at ``step`` metres.
    """

    def __init__(self, xy, step: float = 0.05):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if xy.shape[1] != 2 or len(xy) == 0:
            raise ValueError("path needs at least one (x, y) vertex")
        self.xy = xy
        seg = np.hypot(*np.diff(xy, axis=0).T) if len(xy) > 1 else np.zeros(0)
        self.arclength = np.concatenate([[0.0], np.cumsum(seg)])
        self.step = float(step)

    def __len__(self):
        return len(self.xy)

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    @property
    def poses(self) -> list[Pose]:
        out = []
        for i, (x, y) in enumerate(self.xy):
            j = min(i, len(self.xy) - 2)
            if j < 0:
                heading = 0.0
            else:
                dx, dy = self.xy[j + 1] - self.xy[j]
                heading = math.atan2(dy, dx)
            out.append(Pose(x, y, heading))
        return out

    @classmethod
    def from_poses(cls, poses, step: float = 0.05) -> Path:
        return cls([(p.x, p.y) for p in poses], step)

    @cached_property
    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """(points, arclengths) resampled at ``step`` spacing, vertices included."""
        if len(self.xy) == 1:
            return self.xy.copy(), np.zeros(1)
        s = np.arange(0.0, self.length, self.step)
        s = np.union1d(s, self.arclength)
        return self.points_at(s), s

    def points_at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        if len(self.xy) == 1:
            return np.repeat(self.xy, np.size(s), axis=0).reshape(np.shape(s) + (2,))
        x = np.interp(s, self.arclength, self.xy[:, 0])
        y = np.interp(s, self.arclength, self.xy[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, s: float) -> float:
        if len(self.xy) == 1:
            return 0.0
        i = int(np.clip(np.searchsorted(self.arclength, s, side="right") - 1, 0, len(self.xy) - 2))
        dx, dy = self.xy[i + 1] - self.xy[i]
        return math.atan2(dy, dx)

    def project(self, x: float, y: float, lo: float | None = None, hi: float | None = None) -> float:
        """Arc length of the closest resampled point; ties go to the smallest arc length.

        ``lo``/``hi`` optionally restrict the search to an arc-length interval.
        """
        pts, s = self.dense
        if lo is not None or hi is not None:
            i0 = 0 if lo is None else int(np.searchsorted(s, lo, side="left"))
            i1 = len(s) if hi is None else int(np.searchsorted(s, hi, side="right"))
            i0 = min(i0, len(s) - 1)
            i1 = max(i1, i0 + 1)
            pts, s = pts[i0:i1], s[i0:i1]
        d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
        return float(s[int(np.argmin(d2))])

    def segment(self, s0: float, s1: float, count: int) -> np.ndarray:
        """``count`` evenly spaced points between arc lengths s0 and s1."""
        return self.points_at(np.linspace(s0, s1, count))
