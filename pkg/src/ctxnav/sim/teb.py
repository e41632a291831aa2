"""Elastic-band local planner standing in for Timed Elastic Bands.

A band of poses from the robot to a lookahead point on the global path is
relaxed by gradient descent on smoothness plus obstacle repulsion; the robot
then pure-pursues the relaxed band.
"""

from __future__ import annotations

import math

import numpy as np

from ctxnav.path import Path
from ctxnav.sim.configs import PlannerConfig
from ctxnav.sim.robot import RobotSpec, RobotState
from ctxnav.world import LidarSpec, OccupancyGrid

BAND_POSES = 12
BAND_LENGTH = 2.5
ITERATIONS = 20
STEP = 0.1
MAX_MOVE = 0.05
PURSUIT_DISTANCE = 0.8
MIN_PURSUIT = 0.4
FRONT_SECTOR = math.radians(20.0)
FEASIBLE_FRACTIONS = (1.0, 0.75, 0.5, 0.25)
FEASIBLE_MARGIN = 0.02
FEASIBLE_SLACK = 0.05
ARC_STEP = 0.05


def band_cost(band: np.ndarray, grid: OccupancyGrid, cfg: PlannerConfig, robot: RobotSpec) -> float:
    lap = band[:-2] - 2.0 * band[1:-1] + band[2:]
    d = grid.clearance(band[:, 0], band[:, 1]) - robot.radius
    pen = np.maximum(0.0, cfg.inflation_radius - d)
    return float((lap ** 2).sum() + cfg.weight_obstacle * (pen ** 2).sum())


def optimize_band(band: np.ndarray, grid: OccupancyGrid, cfg: PlannerConfig,
                  robot: RobotSpec = RobotSpec(), iterations: int = ITERATIONS) -> np.ndarray:
    """Gradient steps on smoothness + weight_obstacle * max(0, inflation - d)^2.

    ``d`` is the clearance between the robot footprint and the nearest
    obstacle at each pose.  Both band ends stay fixed.
    """
    band = np.array(band, dtype=float)
    if len(band) < 3:
        return band
    gx_field, gy_field = grid.clearance_gradient
    for _ in range(iterations):
        grad = np.zeros_like(band)
        lap = band[:-2] - 2.0 * band[1:-1] + band[2:]
        # d/db of sum ||b[i-1] - 2 b[i] + b[i+1]||^2
        grad[:-2] += 2.0 * lap
        grad[1:-1] -= 4.0 * lap
        grad[2:] += 2.0 * lap
        if cfg.weight_obstacle > 0:
            d = grid.clearance(band[:, 0], band[:, 1]) - robot.radius
            pen = np.maximum(0.0, cfg.inflation_radius - d)
            ix, iy = grid.cell_of(band[:, 0], band[:, 1])
            ix = np.clip(ix, 0, grid.width_cells - 1)
            iy = np.clip(iy, 0, grid.height_cells - 1)
            gd = np.column_stack([gx_field[iy, ix], gy_field[iy, ix]])
            grad += -2.0 * cfg.weight_obstacle * pen[:, None] * gd
        move = -STEP * grad
        # elastic-band style: poses slide across the band, never along it
        tan = np.zeros_like(band)
        tan[1:-1] = band[2:] - band[:-2]
        tn = np.linalg.norm(tan, axis=1, keepdims=True)
        tan = np.divide(tan, tn, out=np.zeros_like(tan), where=tn > 1e-12)
        move -= (move * tan).sum(axis=1, keepdims=True) * tan
        norm = np.linalg.norm(move, axis=1, keepdims=True)
        move *= np.minimum(1.0, MAX_MOVE / np.maximum(norm, 1e-12))
        move[0] = move[-1] = 0.0
        band += move
    return band


def initial_band(state: RobotState, path_segment: Path, count: int = BAND_POSES) -> np.ndarray:
    pts = path_segment.segment(0.0, path_segment.length, count)
    pts[0] = (state.pose.x, state.pose.y)
    return pts


def teb_step(state: RobotState, scan, path_segment: Path, cfg: PlannerConfig, grid: OccupancyGrid,
             robot: RobotSpec = RobotSpec(), lidar: LidarSpec = LidarSpec()) -> tuple[float, float]:
    """Relax the band, then track it with pure pursuit capped at ``cfg.max_speed``."""
    if cfg.family != "teb":
        raise ValueError(f"{cfg.id} is not a TEB configuration")
    band = optimize_band(initial_band(state, path_segment), grid, cfg, robot)
    p = state.pose
    rel = band - (p.x, p.y)
    dist = np.hypot(rel[:, 0], rel[:, 1])
    # a shorter lookahead near obstacles keeps pure pursuit from cutting corners
    now = float(grid.exact_clearance(np.array([p.x]), np.array([p.y]))[0]) - robot.radius
    lookahead = min(PURSUIT_DISTANCE, max(MIN_PURSUIT, MIN_PURSUIT + 2.0 * now))
    ahead = np.flatnonzero(dist >= lookahead)
    target = band[ahead[0]] if ahead.size else band[-1]
    tx, ty = target[0] - p.x, target[1] - p.y
    ld = max(math.hypot(tx, ty), 1e-6)
    alpha = math.remainder(math.atan2(ty, tx) - p.theta, 2 * math.pi)

    # speed: capped by config and heading error; the band itself keeps the clearance
    v = cfg.max_speed * max(0.0, math.cos(alpha)) ** 2
    if scan is not None:
        scan = np.asarray(scan)
        rel_angles = np.abs(np.angle(np.exp(1j * lidar.angles)))
        front = float(scan[rel_angles <= FRONT_SECTOR].min()) - robot.radius
        v = min(v, math.sqrt(2.0 * robot.a_max * max(0.0, front - 0.05)))
    if abs(alpha) > math.radians(60.0):
        # turn in place toward the band
        return 0.0, float(np.clip(2.0 * alpha, -robot.omega_max, robot.omega_max))
    omega = 2.0 * max(v, 0.2) * math.sin(alpha) / ld
    omega = float(np.clip(omega, -robot.omega_max, robot.omega_max))
    return feasible_speed(state, v, omega, grid, robot), omega


def feasible_speed(state: RobotState, v: float, omega: float, grid: OccupancyGrid,
                   robot: RobotSpec) -> float:
    """Largest of a few fractions of ``v`` whose arc stays clear until the robot could stop.

    Stands in for the trajectory feasibility check: the command is held for
    one period, then the robot brakes at ``a_max`` along the same arc.  A
    robot already inside the margin may move as long as it gets no closer.
    """
    if v <= 0.0:
        return 0.0
    p = state.pose
    now = float(grid.exact_clearance(np.array([p.x]), np.array([p.y]))[0])
    need = min(robot.radius + FEASIBLE_MARGIN, now - 1e-6)
    kappa = omega / v
    for f in FEASIBLE_FRACTIONS:
        vf = v * f
        reach = vf * robot.control_dt + vf * vf / (2.0 * robot.a_max) + FEASIBLE_SLACK
        s = np.linspace(ARC_STEP, reach, max(2, int(math.ceil(reach / ARC_STEP))))
        if abs(kappa) < 1e-9:
            xs = p.x + s * math.cos(p.theta)
            ys = p.y + s * math.sin(p.theta)
        else:
            th = p.theta + kappa * s
            xs = p.x + (np.sin(th) - math.sin(p.theta)) / kappa
            ys = p.y - (np.cos(th) - math.cos(p.theta)) / kappa
        if grid.exact_clearance(xs, ys).min() >= need:
            return float(vf)
    return 0.0
