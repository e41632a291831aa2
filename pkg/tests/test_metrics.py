"""Metrics: safety, braking distance, narrowness, obstacle density, performance."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxnav.errors import DomainError, EmptyScan, InsufficientHistory
from ctxnav.metrics import (MetricsRecord, MetricsSampler, PathWindow, braking_distance, narrowness,
                            nearest_obstacle, obstacle_density, performance, project_onto_path, safety)
from ctxnav.path import Path
from ctxnav.sim.configs import get_config
from ctxnav.sim.mission import RunLog, run_mission
from ctxnav.sim.robot import RobotSpec
from ctxnav.world import EnvironmentSpec, LidarSpec, OccupancyGrid, Pose, generate, lidar_scan

RES = 0.05


# -- braking distance / safety --------------------------------------------------------

@pytest.mark.parametrize("v,a,want", [(0.0, 0.5, 0.0), (1.0, 0.5, 1.0), (0.5, 0.5, 0.25)])
def test_braking_distance_examples(v, a, want):
    # [TRIVIAL] v^2 / (2 a_max)
    assert braking_distance(v, a) == pytest.approx(want, abs=1e-12)


def test_braking_distance_domain():
    with pytest.raises(DomainError):
        braking_distance(1.0, 0.0)


@pytest.mark.parametrize("d_obs,d_brake,want", [(2.0, 1.0, 1.0), (0.0, 0.7, 0.0), (0.5, 1.0, 0.5),
                                                (0.3, 0.0, 1.0)])
def test_safety_examples(d_obs, d_brake, want):
    # [TRIVIAL] both branches; [PAPER] a hit (d_obs = 0) gives 0; a stationary robot is safe
    assert safety(d_obs, d_brake) == pytest.approx(want, abs=1e-12)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.001, 10))
def test_safety_monotone_and_bounded(d1, d2, d_brake):
    lo, hi = sorted((d1, d2))
    assert 0.0 <= safety(lo, d_brake) <= safety(hi, d_brake) <= 1.0


@given(st.floats(0.001, 100))
def test_safety_at_braking_distance_is_one(d):
    assert safety(d, d) == 1.0


# -- nearest obstacle ---------------------------------------------------------------------

def test_nearest_obstacle_examples():
    # [TRIVIAL]
    assert nearest_obstacle(np.full(360, 5.0)) == 5.0
    scan = np.full(360, 5.0)
    scan[17] = 0.3
    assert nearest_obstacle(scan) == 0.3
    with pytest.raises(EmptyScan):
        nearest_obstacle([])


def test_nearest_obstacle_centered_corridor():
    # [DERIVED] raw minimum beam from the centre of a 3 m corridor is about 1.5 m
    grid, wps = generate(EnvironmentSpec(corridor_width=3.0, corridor_length=12.0))
    scan = lidar_scan(grid, Pose(6.0, wps[0].y))
    assert abs(nearest_obstacle(scan) - 1.5) <= RES


# -- narrowness -------------------------------------------------------------------------

def _scan(left: float, right: float, rest: float = 5.0) -> np.ndarray:
    s = np.full(360, rest)
    s[80:101] = left
    s[260:281] = right
    return s


@pytest.mark.parametrize("left,right,want", [(5.0, 5.0, 4.0), (0.5, 0.5, 2.0), (0.1, 5.0, 2.2)])
def test_narrowness_examples(left, right, want):
    # [TRIVIAL] open space 4.0; 1 m corridor 2.0; hugging a wall 2.2
    assert narrowness(_scan(left, right), 0.5) == pytest.approx(want, abs=1e-9)


def test_narrowness_uses_sector_minimum():
    # a single short beam inside the +-5 degree sector counts (aliasing guard)
    s = _scan(0.8, 0.8)
    s[93] = 0.6
    assert narrowness(s, 0.5) == pytest.approx((0.6 + 0.8) / 0.5)
    s = _scan(0.8, 0.8)
    s[70] = 0.1  # outside the sector
    assert narrowness(s, 0.5) == pytest.approx(1.6 / 0.5)


def test_narrowness_domain():
    with pytest.raises(DomainError):
        narrowness(_scan(1, 1), 0.0)


@given(st.lists(st.floats(0, 5), min_size=360, max_size=360), st.floats(0.1, 1.0))
def test_narrowness_bounds(scan, r_width):
    n = narrowness(np.array(scan), r_width)
    assert 0.0 <= n <= 2.0 * 1.0 / r_width + 1e-12


@settings(max_examples=30)
@given(st.lists(st.floats(0, 5), min_size=360, max_size=360), st.integers(0, 359), st.floats(0, 5))
def test_narrowness_never_increases_when_a_beam_shortens(scan, i, new):
    scan = np.array(scan)
    shorter = scan.copy()
    shorter[i] = min(scan[i], new)
    assert narrowness(shorter, 0.5) <= narrowness(scan, 0.5) + 1e-12


def test_narrowness_on_generated_corridor():
    # [DERIVED] 1 m-wide free strip built by hand: centred robot sees 0.5 m each side
    cells = np.zeros((60, 100), dtype=bool)
    cells[:20, :] = True
    cells[40:, :] = True
    g = OccupancyGrid(cells, RES)
    scan = lidar_scan(g, Pose(2.5, 1.5))
    assert narrowness(scan, 0.5) == pytest.approx(2.0, abs=2 * RES / 0.5)


# -- obstacle density ----------------------------------------------------------------------

def test_obstacle_density_free_and_full():
    # [TRIVIAL]
    free = OccupancyGrid(np.zeros((80, 80), dtype=bool), RES)
    assert obstacle_density(free, Pose(1.0, 2.0)) == 0.0
    full = OccupancyGrid(np.ones((80, 80), dtype=bool), RES)
    assert obstacle_density(full, Pose(1.0, 2.0)) == 1.0


def test_obstacle_density_quarter_block():
    # [DERIVED] 100 of 400 window cells occupied by a 0.5 x 0.5 block -> 0.25
    cells = np.zeros((80, 80), dtype=bool)
    # window ahead of (1.0, 2.0) facing +x spans x in [1, 2], y in [1.5, 2.5]
    cells[int(1.75 / RES):int(2.25 / RES), int(1.25 / RES):int(1.75 / RES)] = True
    g = OccupancyGrid(cells, RES)
    assert int(cells.sum()) == 100
    assert obstacle_density(g, Pose(1.0, 2.0, 0.0)) == pytest.approx(0.25, abs=1e-12)
    # facing away, the block is behind the window
    assert obstacle_density(g, Pose(1.0, 2.0, math.pi)) == 0.0


def test_obstacle_density_off_map_counts_as_occupied():
    g = OccupancyGrid(np.zeros((40, 40), dtype=bool), RES)
    # robot at the right border facing out: the whole window is off the map
    assert obstacle_density(g, Pose(1.999, 1.0, 0.0)) == pytest.approx(1.0, abs=0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-math.pi, math.pi))
def test_obstacle_density_monotone_and_rear_invariant(seed, theta):
    rng = np.random.default_rng(seed)
    cells = rng.random((80, 80)) < 0.2
    pose = Pose(2.0, 2.0, theta)
    g = OccupancyGrid(cells, RES)
    base = obstacle_density(g, pose)
    assert 0.0 <= base <= 1.0
    # adding occupied cells never lowers the density
    more = cells | (rng.random(cells.shape) < 0.1)
    assert obstacle_density(OccupancyGrid(more, RES), pose) >= base
    # changing cells strictly behind the robot centre leaves it unchanged
    ys, xs = np.mgrid[0:80, 0:80]
    cx, cy = (xs + 0.5) * RES - pose.x, (ys + 0.5) * RES - pose.y
    behind = cx * math.cos(theta) + cy * math.sin(theta) < -2 * RES
    flipped = np.where(behind, ~cells, cells)
    assert obstacle_density(OccupancyGrid(flipped, RES), pose) == base


# -- performance -------------------------------------------------------------------------

@pytest.mark.parametrize("d_ref,v_max,want", [(2.0, 1.0, 1.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.5),
                                              (2.5, 1.0, 1.0)])
def test_performance_examples(d_ref, v_max, want):
    # [TRIVIAL] t_ref / t_act, clamped
    assert performance(d_ref, v_max) == pytest.approx(want, abs=1e-12)


def _window(poses_t):
    w = PathWindow()
    for t, p in poses_t:
        w.push(t, p)
    return w


def test_project_tracking_and_stationary():
    # [TRIVIAL] tracking at v for 2 s -> 2v; stationary -> 0
    path = Path([(0.0, 0.0), (10.0, 0.0)])
    v = 0.7
    w = _window([(0.1 * k, Pose(1.0 + v * 0.1 * k, 0.0)) for k in range(21)])
    assert project_onto_path(w, path) == pytest.approx(2 * v, abs=0.05)
    w = _window([(0.1 * k, Pose(3.0, 0.0)) for k in range(21)])
    assert project_onto_path(w, path) == 0.0


@given(st.floats(-0.5, 0.5), st.floats(0.1, 1.0))
def test_project_invariant_to_lateral_offset(offset, v):
    # [DERIVED] closed form on a 2-vertex path: the offset projects out
    path = Path([(0.0, 0.0), (10.0, 0.0)], step=0.01)
    w = _window([(0.1 * k, Pose(2.0 + v * 0.1 * k, offset)) for k in range(21)])
    assert project_onto_path(w, path) == pytest.approx(2 * v, abs=0.011)


def test_project_needs_two_seconds():
    w = _window([(0.1 * k, Pose(k * 0.1, 0.0)) for k in range(5)])
    with pytest.raises(InsufficientHistory):
        project_onto_path(w, Path([(0.0, 0.0), (5.0, 0.0)]))


def test_path_window_span_and_order():
    w = _window([(0.1 * k, Pose(0, 0)) for k in range(40)])
    assert w.span <= 2.0 + 0.1 + 1e-9 and w.ready
    with pytest.raises(ValueError):
        w.push(0.5, Pose(0, 0))


# -- records and the sampler ----------------------------------------------------------------

def test_record_row_roundtrip():
    r = MetricsRecord(0.3, 1.0, 2.0, 0.1, 0.5, -0.2, "dwa_v1_a0_b0", 0.4, 0.8, None, 3.2, 0.05, "-")
    row = dict(zip(MetricsRecord.columns(), r.to_row()))
    assert row["performance"] == ""
    assert MetricsRecord.from_row(row) == r


def test_performance_undefined_for_first_two_seconds():
    grid, wps = generate(EnvironmentSpec(corridor_width=3.0, corridor_length=12.0))
    log = run_mission(grid, wps, initial_cfg="dwa_v1_a0_b0")
    for r in log.records:
        assert (r.performance is None) == (r.t < 2.0 - 1e-9)


def test_metrics_recomputed_from_runlog(tmp_path):
    # [DERIVED] every metric column is a pure function of (grid, logged state history)
    grid, wps = generate(EnvironmentSpec(corridor_width=3.0, corridor_length=12.0, clutterness=3, seed=4))
    log = run_mission(grid, wps, initial_cfg="teb_v1_a0_b0", seed=4)
    log.write(tmp_path / "run.csv")
    back = RunLog.read(tmp_path / "run.csv")
    from ctxnav.sim.planning import plan_route
    robot = RobotSpec()
    sampler = MetricsSampler(grid, plan_route(grid, wps, robot), robot.r_width, robot.a_max, robot.v_max)
    for r in back.records:
        again = sampler.sample(r.t, Pose(r.x, r.y, r.theta), r.v, r.omega, r.config_id)
        assert again.d_obs == r.d_obs and again.safety == r.safety
        assert again.narrowness == r.narrowness and again.obstacle_density == r.obstacle_density
        assert again.performance == r.performance


def test_sampler_edge_based_d_obs():
    # d_obs is measured from the footprint edge: a collision gives safety 0
    cells = np.zeros((40, 80), dtype=bool)
    cells[:, 40:] = True
    g = OccupancyGrid(cells, RES)
    s = MetricsSampler(g, Path([(0.5, 1.0), (1.9, 1.0)]), 0.5, 0.5, 1.0, LidarSpec())
    rec = s.sample(0.0, Pose(1.9, 1.0), 0.5, 0.0, get_config("dwa_v1_a0_b0").id)
    assert rec.d_obs == 0.0 and rec.safety == 0.0
    rec = s.sample(0.1, Pose(1.0, 1.0), 1.0, 0.0, "dwa_v1_a0_b0")
    assert rec.d_obs == pytest.approx(0.75, abs=RES)
    assert rec.safety == pytest.approx(0.75, abs=RES)
