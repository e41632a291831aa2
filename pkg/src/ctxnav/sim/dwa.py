"""Dynamic Window Approach local planner.

Samples (v, omega) inside the window reachable in one control tick, rolls
each pair forward for ``sim_time`` and rejects rollouts whose footprint hits
an obstacle.  Above ``scaling_speed`` the footprint grows with speed, which
forces the robot to slow down next to obstacles.
"""

from __future__ import annotations

import math

import numpy as np

from ctxnav.sim.configs import PlannerConfig
from ctxnav.sim.robot import RobotSpec, RobotState
from ctxnav.world import OccupancyGrid, Pose

W_HEADING = 0.3
W_PROGRESS = 0.3
W_PATH = 0.15
W_CLEARANCE = 0.05
W_VELOCITY = 0.1
PATH_TOLERANCE = 1.0
GOAL_REACHED = 0.2

V_SAMPLES = 5
OMEGA_SAMPLES = 21
ROLLOUT_DT = 0.1
CLEARANCE_CAP = 0.5
FOOTPRINT_GROWTH = 0.2
SAFETY_MARGIN = 0.02
# a robot that braked to rest right at the margin still needs the escape rule
ESCAPE_BAND = 2.0 * SAFETY_MARGIN


def footprint_radius(v, robot: RobotSpec, cfg: PlannerConfig):
    v = np.asarray(v, dtype=float)
    scale = np.where(v > cfg.scaling_speed, 1.0 + v / cfg.scaling_speed * FOOTPRINT_GROWTH, 1.0)
    return robot.radius * scale


def rollout(pose: Pose, v, omega, horizon: float, dt: float = ROLLOUT_DT):
    """Constant-twist arcs for every (v, omega) pair; arrays shaped (pairs, steps)."""
    v = np.asarray(v, dtype=float)[:, None]
    w = np.asarray(omega, dtype=float)[:, None]
    tau = dt * np.arange(1, int(round(horizon / dt)) + 1)[None, :]
    th = pose.theta + w * tau
    straight = np.abs(w) < 1e-9
    w_safe = np.where(straight, 1.0, w)
    xs = np.where(straight, pose.x + v * tau * math.cos(pose.theta),
                  pose.x + v / w_safe * (np.sin(th) - math.sin(pose.theta)))
    ys = np.where(straight, pose.y + v * tau * math.sin(pose.theta),
                  pose.y - v / w_safe * (np.cos(th) - math.cos(pose.theta)))
    return xs, ys, th


def braking_rollout(pose: Pose, v0: float, omegas, robot: RobotSpec, dt: float = ROLLOUT_DT):
    """Paths traced while decelerating at a_max from v0 to rest under each constant omega."""
    omegas = np.asarray(omegas, dtype=float)[:, None]
    steps = max(1, int(math.ceil(v0 / (robot.a_max * dt))))
    v = np.maximum(v0 - robot.a_max * dt * np.arange(1, steps + 1), 0.0)[None, :]
    th = pose.theta + omegas * dt * np.arange(1, steps + 1)[None, :]
    xs = pose.x + np.cumsum(v * dt * np.cos(th), axis=1)
    ys = pose.y + np.cumsum(v * dt * np.sin(th), axis=1)
    return xs, ys


def dynamic_window(state: RobotState, cfg: PlannerConfig, robot: RobotSpec):
    dv = robot.a_max * robot.control_dt
    v_lo = max(0.0, state.v - dv)
    v_hi = max(v_lo, min(cfg.max_speed, robot.v_max, state.v + dv))
    vs = np.linspace(v_lo, v_hi, V_SAMPLES)
    ws = np.linspace(-robot.omega_max, robot.omega_max, OMEGA_SAMPLES)
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    return vv.ravel(), ww.ravel()


def _path_fit(xs, ys, path_xy):
    """Distance to the nearest path sample and that sample's fraction along the path."""
    d = np.hypot(xs[:, None] - path_xy[None, :, 0], ys[:, None] - path_xy[None, :, 1])
    idx = d.argmin(axis=1)
    return d[np.arange(len(xs)), idx], idx / max(len(path_xy) - 1, 1)


def _spread(x):
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.ones_like(x)


def evaluate(state: RobotState, local_goal: Pose, cfg: PlannerConfig, grid: OccupancyGrid,
             robot: RobotSpec, path_xy=None):
    """Score every sample; returns (v, omega, score, collides, min clearance) arrays.

    ``path_xy`` is a densely sampled stretch of the global path ahead of the
    robot; rollouts ending close to it and far along it score higher.
    """
    vs, ws = dynamic_window(state, cfg, robot)
    xs, ys, th = rollout(state.pose, vs, ws, cfg.sim_time)
    clear_steps = grid.exact_clearance(xs, ys)
    clear = clear_steps.min(axis=1)
    radius = footprint_radius(vs, robot, cfg)
    margin = SAFETY_MARGIN
    limit = radius + margin
    hit = clear_steps < limit[:, None]
    # admissible if, after holding the command for one period, the robot can
    # still brake to rest before reaching the first unsafe rollout step
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), hit.shape[1])
    room = vs * ROLLOUT_DT * first
    stop = vs * ROLLOUT_DT + vs * vs / (2.0 * robot.a_max)
    collides = hit.any(axis=1) & (stop > room)
    now = float(grid.exact_clearance(np.array([state.pose.x]), np.array([state.pose.y]))[0])
    if _inside_margin(grid, state.pose, robot):
        # already inside the margin: only moves that end farther from obstacles are legal
        collides = (clear_steps < radius[:, None]).any(axis=1) | (clear_steps[:, -1] <= now)
    # turning on the spot never moves a disc footprint
    spin = vs <= 1e-9
    collides[spin] = now < robot.radius

    # score each rollout where it comes closest to the local goal, so arcs
    # running past a nearby goal are not rewarded for curling back to it
    rows = np.arange(len(vs))
    dist = np.hypot(xs - local_goal.x, ys - local_goal.y)
    k = dist.shape[1] - 1 - dist[:, ::-1].argmin(axis=1)  # last step on ties (turning in place)
    ex, ey, eth = xs[rows, k], ys[rows, k], th[rows, k]
    to_goal = np.arctan2(local_goal.y - ey, local_goal.x - ex)
    err = np.abs(np.angle(np.exp(1j * (to_goal - eth))))
    heading = np.where(np.hypot(local_goal.x - ex, local_goal.y - ey) < GOAL_REACHED, 1.0, 1.0 - err / math.pi)
    clearance = np.clip(clear - radius, 0.0, CLEARANCE_CAP) / CLEARANCE_CAP
    # velocity and progress are normalised across the window
    velocity = _spread(vs)
    if path_xy is not None and len(path_xy):
        gap, along = _path_fit(ex, ey, np.asarray(path_xy, dtype=float))
        on_path = 1.0 - np.minimum(gap, PATH_TOLERANCE) / PATH_TOLERANCE
        progress = _spread(along)
    else:
        on_path = progress = np.ones_like(vs)
    score = (W_HEADING * heading + W_PROGRESS * progress + W_PATH * on_path
             + W_CLEARANCE * clearance + W_VELOCITY * velocity)
    return vs, ws, score, collides, clear


def dwa_step(state: RobotState, scan, local_goal: Pose, cfg: PlannerConfig, grid: OccupancyGrid,
             robot: RobotSpec = RobotSpec(), path_xy=None) -> tuple[float, float]:
    """Best admissible (v, omega); brake along the clearest stopping path if nothing is admissible.

    ``scan`` is accepted for interface parity with the other planner; collision
    checks use exact distances to the map's occupied cells.
    """
    if cfg.family != "dwa":
        raise ValueError(f"{cfg.id} is not a DWA configuration")
    vs, ws, score, collides, clear = evaluate(state, local_goal, cfg, grid, robot, path_xy)
    if collides.all():
        # brake as hard as possible, steering along the clearest stopping path
        omegas = np.unique(ws)
        bx, by = braking_rollout(state.pose, state.v, omegas, robot)
        best = int(np.argmax(grid.exact_clearance(bx, by).min(axis=1)))
        return float(vs.min()), float(omegas[best])
    moving = (vs > 1e-9) & ~collides
    if moving.any():
        # turning on the spot is a fallback only; scoring spins over the full
        # horizon makes the robot dither between headings it never reaches
        best = int(np.argmax(np.where(moving, score, -np.inf)))
        return float(vs[best]), float(ws[best])
    p = state.pose
    target = math.atan2(local_goal.y - p.y, local_goal.x - p.x)
    if _inside_margin(grid, p, robot):
        # wedged against an obstacle: face open space first
        ix, iy = grid.cell_of(p.x, p.y)
        gx, gy = (g[iy, ix] for g in grid.clearance_gradient)
        if math.hypot(gx, gy) > 1e-9:
            target = math.atan2(gy, gx)
    err = math.remainder(target - p.theta, 2 * math.pi)
    return 0.0, float(np.clip(2.0 * err, -robot.omega_max, robot.omega_max))


def _inside_margin(grid: OccupancyGrid, pose: Pose, robot: RobotSpec) -> bool:
    now = grid.exact_clearance(np.array([pose.x]), np.array([pose.y]))[0]
    return bool(now < robot.radius + ESCAPE_BAND)
