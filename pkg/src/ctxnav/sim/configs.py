"""The 16 local-planner configurations the metacontroller switches between."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from ctxnav.errors import UnknownConfig

ID_PATTERN = re.compile(r"^(dwa|teb)_v([12])_a([01])_b([01])$")

MAX_SPEED = {1: 1.0, 2: 0.5}
# family -> (param_a values, param_b values)
PARAM_VALUES = {
    "dwa": ((1.5, 3.0), (0.25, 0.75)),  # sim_time [s], scaling_speed [m/s]
    "teb": ((0.3, 0.6), (10.0, 50.0)),  # inflation_radius [m], weight_obstacle [-]
}


@dataclass(frozen=True)
class PlannerConfig:
    id: str
    family: str
    max_speed: float
    param_a: float
    param_b: float

    @property
    def sim_time(self) -> float:
        self._need("dwa")
        return self.param_a

    @property
    def scaling_speed(self) -> float:
        self._need("dwa")
        return self.param_b

    @property
    def inflation_radius(self) -> float:
        self._need("teb")
        return self.param_a

    @property
    def weight_obstacle(self) -> float:
        self._need("teb")
        return self.param_b

    def _need(self, family):
        if self.family != family:
            raise AttributeError(f"{self.id} is not a {family} configuration")


def make_config(config_id: str) -> PlannerConfig:
    m = ID_PATTERN.match(config_id)
    if not m:
        raise UnknownConfig(config_id)
    family, v, a, b = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    a_vals, b_vals = PARAM_VALUES[family]
    return PlannerConfig(config_id, family, MAX_SPEED[v], a_vals[a], b_vals[b])


ALL_CONFIG_IDS = tuple(
    f"{fam}_v{v}_a{a}_b{b}"
    for fam, v, a, b in itertools.product(("dwa", "teb"), (1, 2), (0, 1), (0, 1))
)
CONFIGS = {cid: make_config(cid) for cid in ALL_CONFIG_IDS}


def get_config(config_id: str) -> PlannerConfig:
    try:
        return CONFIGS[config_id]
    except KeyError:
        raise UnknownConfig(config_id) from None
