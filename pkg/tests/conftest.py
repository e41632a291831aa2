from __future__ import annotations

import numpy as np
import pytest

from ctxnav.world import OccupancyGrid, Pose

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}
# free-form tables printed after the pass/fail lines
ACCEPTANCE_TABLES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)
    print(f"ACCEPTANCE {number} {title}: {'PASS' if passed else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title} {detail}".rstrip())
    for table in ACCEPTANCE_TABLES:
        terminalreporter.write_line("")
        for line in table.splitlines():
            terminalreporter.write_line(line)


def box_grid(width_m: float, height_m: float, res: float = 0.05, walls: bool = True) -> np.ndarray:
    """Free rectangle, optionally with a one-cell occupied border."""
    cells = np.zeros((int(round(height_m / res)), int(round(width_m / res))), dtype=bool)
    if walls:
        cells[0, :] = cells[-1, :] = True
        cells[:, 0] = cells[:, -1] = True
    return cells


@pytest.fixture
def empty_room() -> OccupancyGrid:
    return OccupancyGrid(box_grid(10.0, 10.0))


@pytest.fixture
def straight_corridor():
    """Obstacle-free 3 m x 12 m corridor with start/goal on its centre line."""
    from ctxnav.world import EnvironmentSpec, generate_corridor
    grid, start, goal = generate_corridor(EnvironmentSpec(corridor_width=3.0, corridor_length=12.0))
    return grid, start, goal


@pytest.fixture
def origin() -> Pose:
    return Pose(5.0, 5.0, 0.0)
