"""Closed-loop mission runner and the RunLog it produces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Protocol

import numpy as np

from ctxnav.metrics import MetricsRecord, MetricsSampler
from ctxnav.path import Path
from ctxnav.sim.configs import PlannerConfig, get_config
from ctxnav.sim.dwa import dwa_step
from ctxnav.sim.planning import plan_route
from ctxnav.sim.robot import RobotSpec, RobotState, step_kinematics
from ctxnav.sim.teb import BAND_LENGTH, BAND_POSES, teb_step
from ctxnav.world import LidarSpec, OccupancyGrid, Pose, lidar_scan

GOAL_TOLERANCE = 0.3
TIMEOUT_FACTOR = 5.0
DWA_LOOKAHEAD = 2.0
DWA_MIN_CARROT = 1.0
DWA_PATH_SAMPLES = 40
SAFETY_THRESHOLD = 0.6
EVENTS = ("-", "adapt_start", "adapt_done", "goal", "collision", "timeout")


class Controller(Protocol):
    """Anything ticked once per control step with the freshly logged record."""

    def reset(self, mission: Mission) -> None: ...

    def on_tick(self, mission: Mission, record: MetricsRecord) -> None: ...


@dataclass
class Switch:
    new_id: str
    t_start: float
    t_kill: float
    t_done: float


@dataclass
class RunLog:
    records: list[MetricsRecord]
    outcome: str
    decisions: list[tuple[float, str, str]] = field(default_factory=list)
    dt: float = 0.1

    @property
    def time_to_completion(self) -> float:
        return self.records[-1].t if self.records else 0.0

    @property
    def average_safety(self) -> float:
        return float(np.mean([r.safety for r in self.records]))

    def time_under(self, threshold: float = SAFETY_THRESHOLD) -> float:
        return self.dt * sum(r.safety < threshold for r in self.records)

    @property
    def average_performance(self) -> float | None:
        vals = [r.performance for r in self.records if r.performance is not None]
        return float(np.mean(vals)) if vals else None

    def events(self, name: str) -> list[MetricsRecord]:
        return [r for r in self.records if r.event == name]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MetricsRecord.columns())
        for r in self.records:
            w.writerow(r.to_row())
        return buf.getvalue()

    def decisions_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "phase", "detail"])
        for t, phase, detail in self.decisions:
            w.writerow([repr(t), phase, detail])
        return buf.getvalue()

    def write(self, path, decisions_path=None) -> None:
        path = FsPath(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.csv_text())
        if decisions_path is not None:
            FsPath(decisions_path).write_text(self.decisions_text())

    @classmethod
    def read(cls, path, dt: float = 0.1) -> RunLog:
        with open(path, newline="") as fh:
            records = [MetricsRecord.from_row(row) for row in csv.DictReader(fh)]
        outcome = records[-1].event if records and records[-1].event in ("goal", "collision", "timeout") else "unknown"
        return cls(records, outcome, dt=dt)


class Mission:
    """One mission: a deterministic state machine advanced on the simulation clock."""

    def __init__(self, grid: OccupancyGrid, waypoints: list[Pose], robot: RobotSpec,
                 initial_cfg: PlannerConfig | str, controller: Controller | None = None,
                 seed: int = 0, lidar: LidarSpec = LidarSpec(), route: Path | None = None):
        self.grid = grid
        self.waypoints = list(waypoints)
        self.robot = robot
        self.lidar = lidar
        self.rng = np.random.default_rng(seed)
        self.route = route if route is not None else plan_route(grid, self.waypoints, robot)
        self.active = get_config(initial_cfg) if isinstance(initial_cfg, str) else initial_cfg
        self.controller = controller
        self.switch: Switch | None = None
        self.decisions: list[tuple[float, str, str]] = []
        self.t = 0.0
        straight = sum(a.distance_to(b) for a, b in zip(self.waypoints, self.waypoints[1:]))
        self.t_limit = TIMEOUT_FACTOR * straight / robot.v_max
        self._progress = 0.0
        self._pending_event: str | None = None

    # -- metacontroller hooks ------------------------------------------------

    @property
    def switch_in_flight(self) -> bool:
        return self.switch is not None

    def log_decision(self, phase: str, detail: str) -> None:
        self.decisions.append((self.t, phase, detail))

    def request_switch(self, new_id: str, reasoning_s: float, execute_s: float) -> bool:
        """Schedule a configuration switch; ignored while another one is in flight.

        The old configuration keeps driving for ``reasoning_s`` (analyze +
        plan), then the planner is down for ``execute_s`` while the robot
        brakes to a stop.
        """
        get_config(new_id)
        if self.switch is not None:
            return False
        t_kill = self.t + reasoning_s
        self.switch = Switch(new_id, self.t, t_kill, t_kill + execute_s)
        self._pending_event = "adapt_start"
        self.log_decision("execute", f"start {self.active.id}->{new_id}")
        return True

    # -- loop -----------------------------------------------------------------

    def _command(self, state: RobotState, scan) -> tuple[float, float]:
        if self.switch is not None and state.t >= self.switch.t_kill - 1e-9:
            return 0.0, 0.0
        p = state.pose
        self._progress = max(self._progress, self.route.project(
            p.x, p.y, lo=self._progress - 1.0, hi=self._progress + 3.0))
        if self.active.family == "dwa":
            # heading aims at a carrot one rollout ahead; progress is scored on a longer stretch
            reach = max(DWA_MIN_CARROT, self.active.sim_time * self.active.max_speed)
            gx, gy = self.route.points_at(min(self._progress + reach, self.route.length))
            s = min(self._progress + reach + DWA_LOOKAHEAD, self.route.length)
            near = self.route.points_at(np.linspace(self._progress, s, DWA_PATH_SAMPLES))
            return dwa_step(state, scan, Pose(gx, gy), self.active, self.grid, self.robot, near)
        s1 = min(self._progress + BAND_LENGTH, self.route.length)
        seg = Path(self.route.points_at(np.linspace(self._progress, s1, BAND_POSES)), step=self.grid.resolution)
        return teb_step(state, scan, seg, self.active, self.grid, self.robot, self.lidar)

    def run(self) -> RunLog:
        robot = self.robot
        dt = robot.control_dt
        start = self.waypoints[0]
        goal = self.waypoints[-1]
        state = RobotState(start, 0.0, 0.0, 0.0)
        sampler = MetricsSampler(self.grid, self.route, robot.r_width, robot.a_max, robot.v_max, self.lidar)
        if self.controller is not None:
            self.controller.reset(self)
        records: list[MetricsRecord] = []
        outcome = "timeout"
        tick = 0
        while True:
            self.t = state.t
            event = "-"
            if self.switch is not None and state.t >= self.switch.t_done - 1e-9:
                self.log_decision("execute", f"done {self.active.id}->{self.switch.new_id}")
                self.active = get_config(self.switch.new_id)
                self.switch = None
                event = "adapt_done"
            scan = lidar_scan(self.grid, state.pose, self.lidar, self.rng)
            rec = sampler.sample(state.t, state.pose, state.v, state.omega, self.active.id, scan)
            records.append(rec)

            terminal = None
            if self.grid.disc_collides(state.pose.x, state.pose.y, robot.radius):
                terminal = "collision"
            elif state.pose.distance_to(goal) <= GOAL_TOLERANCE:
                terminal = "goal"
            elif state.t >= self.t_limit - 1e-9:
                terminal = "timeout"
            if terminal is not None:
                rec.event = terminal
                outcome = terminal
                break

            if self.controller is not None and event == "-":
                self.controller.on_tick(self, rec)
                if self._pending_event is not None:
                    event = self._pending_event
                    self._pending_event = None
            rec.event = event

            v_cmd, w_cmd = self._command(state, scan)
            tick += 1
            state = step_kinematics(state, v_cmd, w_cmd, robot)
            state = RobotState(state.pose, state.v, state.omega, round(tick * dt, 9))
        return RunLog(records, outcome, list(self.decisions), dt)


def run_mission(grid: OccupancyGrid, waypoints: list[Pose], robot: RobotSpec = RobotSpec(),
                initial_cfg: PlannerConfig | str = "dwa_v1_a0_b0", controller: Controller | None = None,
                seed: int = 0, lidar: LidarSpec = LidarSpec(), route: Path | None = None) -> RunLog:
    return Mission(grid, waypoints, robot, initial_cfg, controller, seed, lidar, route).run()
