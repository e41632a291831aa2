"""MAPE-K metacontroller: knowledge base, monitor, analysis, the three
reasoner flows and switch execution on the simulation clock.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from ctxnav.errors import MissingModel, NoData, ParseError, UnknownConfig
from ctxnav.metrics import MetricsRecord
from ctxnav.models import QualityModel, load_model
from ctxnav.sim.configs import ALL_CONFIG_IDS

DEFAULT_THRESHOLD = 0.6


class ReasonerMode(str, enum.Enum):
    MOD0 = "mod0"
    MOD1 = "mod1"
    MOD2 = "mod2"


@dataclass(frozen=True)
class PhaseLatencies:
    """MAPE-K phase durations in milliseconds."""

    monitor_period: float = 97.0
    analyze: float = 520.0
    plan: float = 16.0
    execute: float = 3575.0

    def __post_init__(self):
        if min(self.monitor_period, self.analyze, self.plan, self.execute) < 0:
            raise ValueError("latencies must be >= 0")
        if self.monitor_period <= 0:
            raise ValueError("monitor_period must be > 0")

    @classmethod
    def for_mode(cls, mode: ReasonerMode | str | None) -> PhaseLatencies:
        """Defaults; the plain reasoner plans in 1 ms, the model-based ones in 16 ms."""
        if mode is not None and ReasonerMode(mode) is ReasonerMode.MOD0:
            return cls(plan=1.0)
        return cls()

    @property
    def reasoning_ms(self) -> float:
        return self.analyze + self.plan

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class KBEntry:
    avg_safety: float
    avg_performance: float
    status: str = "ok"
    model: QualityModel | None = None
    predicted_safety: float | None = None
    model_path: str | None = None


@dataclass
class KnowledgeBase:
    entries: dict[str, KBEntry]
    initial_config: str
    nfr_safety_threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        missing = set(ALL_CONFIG_IDS) - set(self.entries)
        if missing:
            raise UnknownConfig(f"knowledge base lacks {sorted(missing)}")
        extra = set(self.entries) - set(ALL_CONFIG_IDS)
        if extra:
            raise UnknownConfig(f"unknown configurations {sorted(extra)}")
        if self.initial_config not in self.entries:
            raise UnknownConfig(self.initial_config)
        if not 0.0 <= self.nfr_safety_threshold <= 1.0:
            raise ValueError("nfr_safety_threshold must lie in [0, 1]")
        for cid, e in self.entries.items():
            if not (0.0 <= e.avg_safety <= 1.0 and 0.0 <= e.avg_performance <= 1.0):
                raise ValueError(f"{cid}: averages must lie in [0, 1]")

    def __getitem__(self, config_id: str) -> KBEntry:
        try:
            return self.entries[config_id]
        except KeyError:
            raise UnknownConfig(config_id) from None

    def copy(self) -> KnowledgeBase:
        """Fresh per-mission copy; models are shared, statuses and predictions are not."""
        entries = {cid: KBEntry(e.avg_safety, e.avg_performance, e.status, e.model,
                                e.predicted_safety, e.model_path)
                   for cid, e in self.entries.items()}
        return KnowledgeBase(entries, self.initial_config, self.nfr_safety_threshold)

    def safest(self) -> str:
        return _argmax(self.entries, lambda e: e.avg_safety)

    def fastest(self) -> str:
        return _argmax(self.entries, lambda e: e.avg_performance)

    def to_dict(self) -> dict:
        return {
            "nfr_safety_threshold": self.nfr_safety_threshold,
            "initial_config": self.initial_config,
            "entries": [{"config_id": cid, "avg_safety": e.avg_safety,
                         "avg_performance": e.avg_performance, "model_path": e.model_path}
                        for cid, e in sorted(self.entries.items())],
        }

    def save(self, path) -> None:
        path = FsPath(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None, load_models: bool = True) -> KnowledgeBase:
        try:
            entries = {}
            for item in d["entries"]:
                mp = item.get("model_path")
                model = None
                if mp and load_models:
                    p = FsPath(mp)
                    if not p.is_absolute() and base_dir is not None:
                        p = FsPath(base_dir) / p
                    model = load_model(p)
                entries[str(item["config_id"])] = KBEntry(float(item["avg_safety"]),
                                                          float(item["avg_performance"]),
                                                          model=model, model_path=mp)
            return cls(entries, str(d["initial_config"]),
                       float(d.get("nfr_safety_threshold", DEFAULT_THRESHOLD)))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed knowledge base: {exc}") from exc

    @classmethod
    def load(cls, path, load_models: bool = True) -> KnowledgeBase:
        path = FsPath(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent, load_models=load_models)

    @classmethod
    def paper_default(cls) -> KnowledgeBase:
        """Averages from the published QA tables; no models attached."""
        text = resources.files("ctxnav").joinpath("data/paper_kb.json").read_text()
        return cls.from_dict(json.loads(text), load_models=False)

    def attach_models(self, models_dir) -> None:
        """Load ``<config_id>.json`` from ``models_dir`` for every entry."""
        for cid, e in self.entries.items():
            p = FsPath(models_dir) / f"{cid}.json"
            if not p.exists():
                raise MissingModel(f"{p} not found")
            e.model = load_model(p)
            e.model_path = str(p)


def _argmax(entries: dict[str, KBEntry], key) -> str:
    # lexicographically smallest id wins ties
    return min(entries, key=lambda cid: (-key(entries[cid]), cid))


@dataclass(frozen=True)
class ObserverReading:
    t: float
    safety: float
    performance: float | None
    narrowness: float
    obstacle_density: float


def monitor_tick(records: Sequence[MetricsRecord]) -> ObserverReading:
    """Windowed mean of the metrics logged since the previous reading."""
    if not records:
        raise NoData("no records since the last monitor tick")
    perf = [r.performance for r in records if r.performance is not None]
    return ObserverReading(
        t=records[-1].t,
        safety=float(np.mean([r.safety for r in records])),
        performance=float(np.mean(perf)) if perf else None,
        narrowness=float(np.mean([r.narrowness for r in records])),
        obstacle_density=float(np.mean([r.obstacle_density for r in records])),
    )


def analyze(reading: ObserverReading, kb: KnowledgeBase) -> bool:
    """True iff the safety requirement is violated (equality is compliant)."""
    return reading.safety < kb.nfr_safety_threshold


def plan_mod0(kb: KnowledgeBase, current_id: str) -> str | None:
    """Ban the violating config, then pick the best average performer among
    the remaining configs whose average safety meets the requirement."""
    kb[current_id].status = "error"
    ok = {cid: e for cid, e in kb.entries.items()
          if e.status == "ok" and e.avg_safety >= kb.nfr_safety_threshold}
    if not ok:
        return None
    return _argmax(ok, lambda e: e.avg_performance)


def update_predictions(kb: KnowledgeBase, reading: ObserverReading, ids=None) -> None:
    for cid in (kb.entries if ids is None else ids):
        e = kb[cid]
        if e.model is None:
            raise MissingModel(f"{cid} has no quality model")
        e.predicted_safety = e.model.predict(reading.narrowness, reading.obstacle_density)


def plan_mod1(kb: KnowledgeBase, current_id: str, reading: ObserverReading) -> str:
    """Best average performer among configs predicted safe in the current
    context; the safest predicted config when none qualifies."""
    kb[current_id]
    update_predictions(kb, reading)
    safe = {cid: e for cid, e in kb.entries.items() if e.predicted_safety >= kb.nfr_safety_threshold}
    if safe:
        return _argmax(safe, lambda e: e.avg_performance)
    return _argmax(kb.entries, lambda e: e.predicted_safety)


def plan_mod2(kb: KnowledgeBase, current_id: str, reading: ObserverReading, violation: bool) -> str | None:
    """As mod1 on violation; otherwise return to the initial config once it is predicted safe."""
    if violation:
        return plan_mod1(kb, current_id, reading)
    if current_id == kb.initial_config:
        return None
    update_predictions(kb, reading, [kb.initial_config])
    if kb[kb.initial_config].predicted_safety >= kb.nfr_safety_threshold:
        return kb.initial_config
    return None


@dataclass
class Metacontroller:
    """Per-tick MAPE-K loop attached to a Mission.

    ``mode=None`` gives the fixed-configuration baselines: the loop still
    monitors and analyzes but never plans.
    """

    kb: KnowledgeBase
    mode: ReasonerMode | None = ReasonerMode.MOD1
    latencies: PhaseLatencies | None = None
    readings: list[ObserverReading] = field(default_factory=list)

    def __post_init__(self):
        if self.mode is not None:
            self.mode = ReasonerMode(self.mode)
        if self.latencies is None:
            self.latencies = PhaseLatencies.for_mode(self.mode)
        if self.mode in (ReasonerMode.MOD1, ReasonerMode.MOD2):
            lacking = [cid for cid, e in self.kb.entries.items() if e.model is None]
            if lacking:
                raise MissingModel(f"{self.mode.value} needs quality models; missing for {lacking[:3]}...")
        self._base_kb = self.kb

    def reset(self, mission) -> None:
        self.kb = self._base_kb.copy()
        self.readings = []
        self._buffer: list[MetricsRecord] = []
        self._next_monitor = self.latencies.monitor_period / 1000.0

    def on_tick(self, mission, record: MetricsRecord) -> None:
        self._buffer.append(record)
        if record.t + 1e-9 < self._next_monitor:
            return
        period = self.latencies.monitor_period / 1000.0
        while self._next_monitor <= record.t + 1e-9:
            self._next_monitor += period
        reading = monitor_tick(self._buffer)
        self._buffer = []
        self.readings.append(reading)
        if self.mode is None or mission.switch_in_flight:
            return
        violation = analyze(reading, self.kb)
        current = mission.active.id
        if self.mode is ReasonerMode.MOD0:
            new = plan_mod0(self.kb, current) if violation else None
        elif self.mode is ReasonerMode.MOD1:
            new = plan_mod1(self.kb, current, reading) if violation else None
        else:
            new = plan_mod2(self.kb, current, reading, violation)
        if violation:
            mission.log_decision("analyze", f"violation safety={reading.safety:.4f} config={current}")
        if violation or new is not None:
            mission.log_decision("plan", f"{self.mode.value} -> {new if new is not None else 'none'}")
        if new is not None and new != current:
            mission.request_switch(new, self.latencies.reasoning_ms / 1000.0,
                                   self.latencies.execute / 1000.0)


def baseline_config(kb: KnowledgeBase, which: str) -> str:
    """Configuration used by a fixed baseline: ``s0`` safest, ``s1`` fastest."""
    if which == "s0":
        return kb.safest()
    if which == "s1":
        return kb.fastest()
    raise ValueError(f"unknown baseline {which!r}")

