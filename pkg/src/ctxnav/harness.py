"""Experiment protocol: training-data collection, model training, the
four-system benchmark and its report files.

Everything is driven by a :class:`Manifest`; identical manifests reproduce
identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from ctxnav.adaptation import KnowledgeBase, KBEntry, Metacontroller, PhaseLatencies, ReasonerMode
from ctxnav.models import DEFAULT_DEGREE, Dataset, Run, cross_validate, degree_sweep, rows_from_log, save_model
from ctxnav.sim.configs import ALL_CONFIG_IDS
from ctxnav.sim.mission import RunLog, run_mission
from ctxnav.world import EnvironmentSpec, generate

SYSTEMS = ("mros_qm", "mros", "s0", "s1")
SYSTEM_LABELS = {"mros_qm": "MROS_qm", "mros": "MROS", "s0": "S0", "s1": "S1"}
METRICS = ("time_to_completion", "average_safety", "time_under_threshold")
MISSION_COUNTS = {1: (3, 3), 2: (6, 6), 3: (10, 10)}


@dataclass
class Manifest:
    """Seeds and experiment parameters; the single source of reproducibility.

    ``kb`` is ``"paper"`` (the shipped average-QA tables) or a path to a
    ``kb.json`` written by :func:`train_all`; ``models_dir`` attaches quality
    models to whichever KB is used.
    """

    name: str = "default"
    base_seed: int = 0
    corridor_widths: list[float] = field(default_factory=lambda: [3.0, 4.0])
    corridor_clutter: list[int] = field(default_factory=lambda: [4, 8])
    corridor_length: float = 30.0
    instances: int = 5
    configs: list[str] = field(default_factory=lambda: list(ALL_CONFIG_IDS))
    mission_types: list[int] = field(default_factory=lambda: [1, 2, 3])
    repetitions: int = 10
    systems: list[str] = field(default_factory=lambda: list(SYSTEMS))
    mros_qm_mode: str = "mod1"
    threshold: float = 0.6
    latencies: dict = field(default_factory=lambda: PhaseLatencies().to_dict())
    degree: int = DEFAULT_DEGREE
    kb: str = "paper"
    models_dir: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        unknown = set(self.systems) - set(SYSTEMS)
        if unknown:
            raise ValueError(f"unknown systems {sorted(unknown)}")
        if set(self.mission_types) - set(MISSION_COUNTS):
            raise ValueError("mission types must be among 1, 2, 3")
        if self.instances < 1 or self.repetitions < 1:
            raise ValueError("instances and repetitions must be >= 1")
        if ReasonerMode(self.mros_qm_mode) is ReasonerMode.MOD0:
            raise ValueError("MROS_qm runs mod1 or mod2")
        PhaseLatencies(**self.latencies)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Manifest:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown manifest keys {sorted(extra)}")
        m = cls(**d)
        m.validate()
        return m

    @classmethod
    def load(cls, path) -> Manifest:
        return cls.from_dict(json.loads(FsPath(path).read_text()))

    def save(self, path) -> None:
        FsPath(path).parent.mkdir(parents=True, exist_ok=True)
        FsPath(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# -- seeds ---------------------------------------------------------------------

def corridor_specs(m: Manifest) -> list[tuple[int, str, EnvironmentSpec]]:
    """(instance index, env id, spec) for every training environment."""
    out = []
    for i in range(m.instances):
        for wi, w in enumerate(m.corridor_widths):
            for ci, c in enumerate(m.corridor_clutter):
                seed = m.base_seed * 100_000 + 1000 * i + 10 * wi + ci
                env_id = f"w{w:g}_c{c}_i{i}"
                out.append((i, env_id, EnvironmentSpec(kind="corridor", corridor_width=float(w),
                                                       corridor_length=m.corridor_length,
                                                       clutterness=int(c), seed=seed)))
    return out


def mission_spec(m: Manifest, mission_type: int, rep: int) -> EnvironmentSpec:
    """The retail map shared by every system for one (mission, repetition)."""
    seed = m.base_seed * 100_000 + 50_000 + 1000 * mission_type + rep
    return EnvironmentSpec(kind="retail", area_counts=MISSION_COUNTS[mission_type], seed=seed)


# -- collection ----------------------------------------------------------------

def _collect_one(task) -> tuple[str, str, str, int]:
    cid, env_id, spec_d, out = task
    spec = EnvironmentSpec.from_dict(spec_d)
    grid, waypoints = generate(spec)
    log = run_mission(grid, waypoints, initial_cfg=cid, seed=spec.seed)
    log.write(FsPath(out) / cid / f"{env_id}.csv")
    return cid, env_id, log.outcome, len(log.records)


def _pool_map(fn, tasks, jobs: int):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


def collect_training_data(m: Manifest, out_dir, jobs: int | None = None) -> list[dict]:
    """Run every config through every corridor instance; RunLogs go to ``out_dir/logs``.

    Returns one summary row per mission (collisions and timeouts included).
    """
    logs = FsPath(out_dir) / "logs"
    envs = corridor_specs(m)
    tasks = [(cid, env_id, spec.to_dict(), str(logs)) for cid in m.configs for _, env_id, spec in envs]
    results = _pool_map(_collect_one, tasks, jobs or m.jobs)
    rows = [{"config_id": c, "env_id": e, "outcome": o, "rows": n} for c, e, o, n in results]
    _write_csv(FsPath(out_dir) / "collect.csv", ["config_id", "env_id", "outcome", "rows"],
               [[r[k] for k in ("config_id", "env_id", "outcome", "rows")] for r in rows])
    _write_json(FsPath(out_dir) / "env_index.json",
                {env_id: {"instance": i, "spec": spec.to_dict()} for i, env_id, spec in envs})
    return rows


def load_datasets(data_dir, configs=ALL_CONFIG_IDS) -> dict[str, Dataset]:
    """Group each config's RunLogs into runs by instance index (env types pooled)."""
    data_dir = FsPath(data_dir)
    index = json.loads((data_dir / "env_index.json").read_text())
    by_instance: dict[int, list[str]] = {}
    for env_id, meta in sorted(index.items()):
        by_instance.setdefault(int(meta["instance"]), []).append(env_id)
    out = {}
    for cid in configs:
        runs = []
        for i in sorted(by_instance):
            env_ids = by_instance[i]
            rows = [rows_from_log(data_dir / "logs" / cid / f"{e}.csv") for e in env_ids]
            runs.append(Run(np.vstack(rows), env_ids, [int(index[e]["spec"]["seed"]) for e in env_ids]))
        out[cid] = Dataset(cid, runs)
    return out


def config_averages(data_dir, cid: str) -> tuple[float, float]:
    """Mean safety over every logged tick and mean of the defined performance values."""
    safety, perf = [], []
    for p in sorted((FsPath(data_dir) / "logs" / cid).glob("*.csv")):
        log = RunLog.read(p)
        safety += [r.safety for r in log.records]
        perf += [r.performance for r in log.records if r.performance is not None]
    return float(np.mean(safety)), float(np.mean(perf))


# -- training ------------------------------------------------------------------

def _train_one(task):
    cid, data_dir, degree = task
    ds = load_datasets(data_dir, [cid])[cid]
    model, report = cross_validate(ds, degree)
    return cid, model, report, config_averages(data_dir, cid), sum(len(r) for r in ds.runs)


def train_all(data_dir, out_dir, degree: int = DEFAULT_DEGREE, threshold: float = 0.6,
              jobs: int = 1) -> list[dict]:
    """Cross-validate and persist a model per config, a score table and a KB."""
    out_dir = FsPath(out_dir)
    results = _pool_map(_train_one, [(cid, str(data_dir), degree) for cid in ALL_CONFIG_IDS], jobs)
    table, entries = [], {}
    for cid, model, report, (avg_s, avg_p), n_rows in results:
        rel = f"models/{cid}.json"
        save_model(model, out_dir / rel)
        f = report.folds[report.selected]
        table.append({"config_id": cid, "r2": f.test_r2, "mse": f.test_mse, "train_r2": f.train_r2,
                      "train_mse": f.train_mse, "selected_fold": report.selected, "rows": n_rows})
        entries[cid] = KBEntry(avg_s, avg_p, model=model, model_path=rel)
    kb = KnowledgeBase(entries, initial_config="dwa_v1_a0_b0", nfr_safety_threshold=threshold)
    kb.initial_config = kb.fastest()
    kb.save(out_dir / "kb.json")
    cols = ["config_id", "r2", "mse", "train_r2", "train_mse", "selected_fold", "rows"]
    _write_csv(out_dir / "scores.csv", cols, [[_fmt(r[c]) for c in cols] for r in table])
    return table


def sweep_degrees(data_dir, degrees) -> list[dict]:
    datasets = list(load_datasets(data_dir).values())
    return degree_sweep(datasets, degrees)


# -- benchmark -----------------------------------------------------------------

def load_kb(source: str, models_dir=None, threshold: float | None = None) -> KnowledgeBase:
    """``paper`` selects the shipped averages; anything else is a kb.json path."""
    kb = KnowledgeBase.paper_default() if source == "paper" else KnowledgeBase.load(source)
    if models_dir is not None:
        kb.attach_models(models_dir)
    if threshold is not None:
        kb.nfr_safety_threshold = threshold
    return kb


def system_setup(system: str, kb: KnowledgeBase, m: Manifest) -> tuple[str, Metacontroller]:
    """Initial config and controller for one benchmark system."""
    lat = m.latencies
    if system == "mros_qm":
        mode = ReasonerMode(m.mros_qm_mode)
        return kb.initial_config, Metacontroller(kb, mode, PhaseLatencies(**lat))
    if system == "mros":
        return kb.initial_config, Metacontroller(kb, ReasonerMode.MOD0, PhaseLatencies(**{**lat, "plan": 1.0}))
    if system == "s0":
        return kb.safest(), Metacontroller(kb, None, PhaseLatencies(**lat))
    if system == "s1":
        return kb.fastest(), Metacontroller(kb, None, PhaseLatencies(**lat))
    raise ValueError(f"unknown system {system!r}")


def _bench_one(task):
    system, mission_type, rep, m_d, kb_d, models, out = task
    m = Manifest.from_dict(m_d)
    kb = KnowledgeBase.from_dict(kb_d, load_models=False)
    for cid, model in models.items():
        kb[cid].model = model
    spec = mission_spec(m, mission_type, rep)
    grid, waypoints = generate(spec)
    initial, controller = system_setup(system, kb, m)
    log = run_mission(grid, waypoints, initial_cfg=initial, controller=controller, seed=spec.seed)
    stem = FsPath(out) / f"{system}_m{mission_type}_r{rep:02d}"
    log.write(stem.with_suffix(".csv"), stem.with_name(stem.name + "_decisions.csv"))
    return (system, mission_type, rep, log.time_to_completion, log.average_safety, log.time_under(),
            log.outcome, len(log.events("adapt_done")))


@dataclass
class BenchmarkReport:
    """Per-run results; aggregates are computed on demand in a fixed order."""

    runs: list[tuple] = field(default_factory=list)

    def cell(self, system: str, mission: int) -> list[tuple]:
        return [r for r in self.runs if r[0] == system and r[1] == mission]

    @property
    def systems(self) -> list[str]:
        return [s for s in SYSTEMS if any(r[0] == s for r in self.runs)]

    @property
    def missions(self) -> list[int]:
        return sorted({r[1] for r in self.runs})

    def values(self, system: str, mission: int, metric: str) -> np.ndarray:
        k = 3 + METRICS.index(metric)
        return np.array([r[k] for r in self.cell(system, mission)], dtype=float)

    def mean(self, system: str, mission: int, metric: str) -> float:
        return float(self.values(system, mission, metric).mean())

    def failures(self, system: str, mission: int) -> dict[str, int]:
        outs = [r[6] for r in self.cell(system, mission)]
        return {"collision": outs.count("collision"), "timeout": outs.count("timeout")}


def run_benchmark(m: Manifest, kb: KnowledgeBase, out_dir, jobs: int | None = None) -> BenchmarkReport:
    """Every (system, mission type, repetition) on paired retail maps."""
    m.validate()
    logs = FsPath(out_dir) / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    models = {cid: e.model for cid, e in kb.entries.items() if e.model is not None}
    kb_d = kb.to_dict()
    tasks = [(s, mt, r, m.to_dict(), kb_d, models, str(logs))
             for s in m.systems for mt in m.mission_types for r in range(m.repetitions)]
    runs = _pool_map(_bench_one, tasks, jobs or m.jobs)
    return BenchmarkReport(sorted(runs, key=lambda r: (SYSTEMS.index(r[0]), r[1], r[2])))


def report(rep: BenchmarkReport, out_dir) -> None:
    """Write ``benchmark.csv`` (tidy) and ``summary.md`` (three tables)."""
    out_dir = FsPath(out_dir)
    rows = []
    for s in rep.systems:
        for mt in rep.missions:
            for metric in METRICS:
                v = rep.values(s, mt, metric)
                rows.append([SYSTEM_LABELS[s], mt, metric, _fmt(v.mean()), _fmt(v.std()), len(v)])
    _write_csv(out_dir / "benchmark.csv", ["system", "mission", "metric", "mean", "std", "n"], rows)

    titles = {"time_to_completion": "Time to completion [s]", "average_safety": "Average safety",
              "time_under_threshold": "Time under the safety threshold [s]"}
    lines = ["# Benchmark summary", ""]
    for metric in METRICS:
        lines += [f"## {titles[metric]}", "", "| system | " + " | ".join(f"mission {mt}" for mt in rep.missions) + " |",
                  "|---|" + "---|" * len(rep.missions)]
        for s in rep.systems:
            cells = []
            for mt in rep.missions:
                v = rep.values(s, mt, metric)
                cells.append(f"{v.mean():.3f} ± {v.std():.3f}")
            lines.append(f"| {SYSTEM_LABELS[s]} | " + " | ".join(cells) + " |")
        lines.append("")
    lines += ["## Failed runs (collision / timeout)", "", "| system | " + " | ".join(f"mission {mt}" for mt in rep.missions) + " |",
              "|---|" + "---|" * len(rep.missions)]
    for s in rep.systems:
        cells = []
        for mt in rep.missions:
            f = rep.failures(s, mt)
            cells.append(f"{f['collision']} / {f['timeout']}")
        lines.append(f"| {SYSTEM_LABELS[s]} | " + " | ".join(cells) + " |")
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")


# -- io helpers ----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


def _write_csv(path, header, rows) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _write_json(path, obj) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
