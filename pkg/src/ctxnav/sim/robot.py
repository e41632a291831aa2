"""Differential-drive robot model."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ctxnav.world import Pose


@dataclass(frozen=True)
class RobotSpec:
    r_width: float = 0.5
    length: float = 0.7
    v_max: float = 1.0
    a_max: float = 0.5
    omega_max: float = 1.5
    control_dt: float = 0.1

    def __post_init__(self):
        for name in ("r_width", "length", "v_max", "a_max", "omega_max", "control_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"RobotSpec.{name} must be positive")

    @property
    def radius(self) -> float:
        """Footprint radius used for collision checks (disc of diameter r_width)."""
        return self.r_width / 2.0


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    v: float = 0.0
    omega: float = 0.0
    t: float = 0.0


def step_kinematics(state: RobotState, v_cmd: float, omega_cmd: float, robot: RobotSpec,
                    tick: int | None = None) -> RobotState:
    """Apply acceleration/velocity limits and integrate the unicycle model over one tick.

    The arc is integrated in closed form.  ``tick`` lets callers derive the
    new timestamp as ``tick * dt`` instead of accumulating rounding error.
    """
    if not (math.isfinite(v_cmd) and math.isfinite(omega_cmd)):
        raise ValueError("commands must be finite")
    dt = robot.control_dt
    dv = robot.a_max * dt
    v = min(max(v_cmd, state.v - dv, 0.0), state.v + dv, robot.v_max)
    v = max(v, 0.0)
    omega = min(max(omega_cmd, -robot.omega_max), robot.omega_max)
    p = state.pose
    if abs(omega) < 1e-9:
        x = p.x + v * dt * math.cos(p.theta)
        y = p.y + v * dt * math.sin(p.theta)
    else:
        th1 = p.theta + omega * dt
        x = p.x + v / omega * (math.sin(th1) - math.sin(p.theta))
        y = p.y - v / omega * (math.cos(th1) - math.cos(p.theta))
    t = state.t + dt if tick is None else tick * dt
    return RobotState(Pose(x, y, p.theta + omega * dt), v, omega, t)


def with_time(state: RobotState, t: float) -> RobotState:
    return replace(state, t=t)
