"""Command-line entry point: ``ctxnav <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Failures print one
JSON line ``{"error": ..., "kind": ..., "exit": ...}`` on standard error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FsPath

from ctxnav import harness
from ctxnav.adaptation import DEFAULT_THRESHOLD, Metacontroller, PhaseLatencies, ReasonerMode
from ctxnav.errors import CtxNavError
from ctxnav.models import DEFAULT_DEGREE
from ctxnav.sim.configs import ALL_CONFIG_IDS
from ctxnav.sim.mission import run_mission
from ctxnav.world import EnvironmentSpec, OccupancyGrid, Pose, generate

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LATENCY_DEFAULTS = PhaseLatencies()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, manifest: bool = False, jobs: bool = False) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="base seed (default: 0, or the manifest's base_seed)")
    p.add_argument("--out", default=None, help="output path (default: see subcommand)")
    if manifest:
        p.add_argument("--manifest", default=None,
                       help="experiment manifest JSON; explicit flags override its values")
    if jobs:
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: 1, or the manifest's jobs)")


def _latency_flags(p: argparse.ArgumentParser) -> None:
    d = LATENCY_DEFAULTS
    p.add_argument("--monitor-ms", type=float, default=None,
                   help=f"monitor period in ms (default: {d.monitor_period:g})")
    p.add_argument("--analyze-ms", type=float, default=None,
                   help=f"analyze latency in ms (default: {d.analyze:g})")
    p.add_argument("--plan-ms", type=float, default=None,
                   help=f"plan latency in ms (default: {d.plan:g}; 1 for mod0)")
    p.add_argument("--execute-ms", type=float, default=None,
                   help=f"execute dead-time in ms (default: {d.execute:g})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxnav", description="Context-based navigation: simulation, quality models and "
                     "MAPE-K adaptation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-env", help="generate a corridor or retail map")
    _common(p)
    p.add_argument("--kind", choices=["corridor", "retail"], default="corridor", help="map kind (default: corridor)")
    p.add_argument("--width", type=float, default=3.0, help="corridor / aisle width in m (default: 3)")
    p.add_argument("--clutter", type=int, default=4,
                   help="obstacle count; per area for retail maps (default: 4)")
    p.add_argument("--length", type=float, default=30.0, help="corridor length in m (default: 30)")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("run", help="run one mission on a generated map")
    _common(p)
    p.add_argument("--map", required=True, help="a .grid file written by gen-env (its .json sibling holds the route)")
    p.add_argument("--config", default="teb_v1_a0_b0", help="initial configuration id (default: teb_v1_a0_b0)")
    p.add_argument("--mode", choices=["off", "mod0", "mod1", "mod2"], default="off",
                   help="reasoner flow; off keeps the configuration fixed (default: off)")
    p.add_argument("--kb", default="paper", help="'paper' or a kb.json path (default: paper)")
    p.add_argument("--models-dir", default=None, help="directory of <config_id>.json quality models")
    p.add_argument("--threshold", type=float, default=None,
                   help=f"safety requirement (default: {DEFAULT_THRESHOLD:g}, or the KB's value)")
    _latency_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("collect", help="collect training data on the corridor instances")
    _common(p, manifest=True, jobs=True)
    p.add_argument("--corridor-length", type=float, default=None, help="corridor length in m (default: 30)")
    p.add_argument("--instances", type=int, default=None, help="instances per environment type (default: 5)")
    p.add_argument("--configs", default=None, help="comma-separated config ids (default: all 16)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="cross-validate and save a safety model per configuration")
    _common(p)
    p.add_argument("--data-dir", required=True, help="output directory of collect")
    p.add_argument("--degree", type=int, default=DEFAULT_DEGREE, help=f"polynomial degree (default: {DEFAULT_DEGREE})")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help=f"safety requirement stored in kb.json (default: {DEFAULT_THRESHOLD:g})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", help="compare MROS_qm, MROS, S0 and S1 on the retail missions")
    _common(p, manifest=True, jobs=True)
    p.add_argument("--systems", default=None, help="comma-separated subset of mros_qm,mros,s0,s1 (default: all)")
    p.add_argument("--reps", type=int, default=None, help="repetitions per mission type (default: 10)")
    p.add_argument("--missions", default=None, help="comma-separated mission types (default: 1,2,3)")
    p.add_argument("--kb", default=None, help="'paper' or a kb.json path (default: paper)")
    p.add_argument("--models-dir", default=None, help="quality models to attach to the KB")
    p.add_argument("--mode", choices=["mod1", "mod2"], default=None, help="MROS_qm reasoner flow (default: mod1)")
    p.add_argument("--threshold", type=float, default=None,
                   help=f"safety requirement (default: {DEFAULT_THRESHOLD:g})")
    _latency_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep-degree", help="mean held-out r2/mse per polynomial degree")
    _common(p)
    p.add_argument("--data-dir", required=True, help="output directory of collect")
    p.add_argument("--degrees", default="1..6", help="'lo..hi' or a comma-separated list (default: 1..6)")
    p.set_defaults(func=cmd_sweep_degree)
    return parser


# -- helpers -------------------------------------------------------------------

def _csv_list(text: str, cast=str) -> list:
    try:
        items = [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not items:
        raise UsageError(f"empty list {text!r}")
    return items


def parse_degrees(text: str) -> list[int]:
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError:
            raise UsageError(f"bad degree range {text!r}") from None
        if lo_i < 1 or hi_i < lo_i:
            raise UsageError(f"bad degree range {text!r}")
        return list(range(lo_i, hi_i + 1))
    degrees = _csv_list(text, int)
    if min(degrees) < 1:
        raise UsageError("degrees must be >= 1")
    return degrees


def _latencies(args, base: dict, mode: str | None = None) -> dict:
    lat = dict(base)
    if mode == "mod0":
        lat["plan"] = 1.0
    for key, flag in (("monitor_period", "monitor_ms"), ("analyze", "analyze_ms"),
                      ("plan", "plan_ms"), ("execute", "execute_ms")):
        if getattr(args, flag) is not None:
            lat[key] = getattr(args, flag)
    try:
        PhaseLatencies(**lat)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return lat


def _load_manifest(args) -> harness.Manifest:
    if args.manifest is None:
        return harness.Manifest()
    path = FsPath(args.manifest)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        return harness.Manifest.load(path)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid manifest: {exc}") from None


def _finish_manifest(m: harness.Manifest, out: FsPath) -> None:
    try:
        m.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    m.save(out / "manifest.json")


def _check_threshold(value: float | None) -> None:
    if value is not None and not 0.0 <= value <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")


# -- subcommands -----------------------------------------------------------------

def cmd_gen_env(args) -> int:
    spec = EnvironmentSpec(kind=args.kind, corridor_width=args.width, corridor_length=args.length,
                           clutterness=args.clutter, seed=args.seed or 0)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stem = FsPath(args.out or f"{args.kind}_{args.seed or 0}")
    grid, waypoints = generate(spec)
    stem.parent.mkdir(parents=True, exist_ok=True)
    grid.save(stem.with_suffix(".grid"))
    meta = {"spec": spec.to_dict(), "waypoints": [[p.x, p.y, p.theta] for p in waypoints]}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {stem.with_suffix('.grid')} and {stem.with_suffix('.json')}")
    return EXIT_OK


def cmd_run(args) -> int:
    grid_path = FsPath(args.map)
    meta_path = grid_path.with_suffix(".json")
    if not grid_path.is_file():
        raise UsageError(f"map not found: {grid_path}")
    if not meta_path.is_file():
        raise UsageError(f"route file not found: {meta_path}")
    if args.config not in ALL_CONFIG_IDS:
        raise UsageError(f"unknown configuration {args.config!r}")
    _check_threshold(args.threshold)
    mode = None if args.mode == "off" else ReasonerMode(args.mode)
    lat = _latencies(args, LATENCY_DEFAULTS.to_dict(), args.mode)
    grid = OccupancyGrid.load(grid_path)
    meta = json.loads(meta_path.read_text())
    waypoints = [Pose(*p) for p in meta["waypoints"]]
    controller = None
    if mode is not None:
        kb = harness.load_kb(args.kb, args.models_dir, args.threshold)
        controller = Metacontroller(kb, mode, PhaseLatencies(**lat))
    seed = args.seed if args.seed is not None else int(meta["spec"].get("seed", 0))
    log = run_mission(grid, waypoints, initial_cfg=args.config, controller=controller, seed=seed)
    out = FsPath(args.out or "run")
    log.write(out / "run.csv", out / "decisions.csv")
    print(json.dumps({"outcome": log.outcome, "time_to_completion": log.time_to_completion,
                      "average_safety": log.average_safety, "time_under_threshold": log.time_under(),
                      "switches": len(log.events("adapt_done"))}))
    return EXIT_OK


def cmd_collect(args) -> int:
    m = _load_manifest(args)
    if args.seed is not None:
        m.base_seed = args.seed
    if args.jobs is not None:
        m.jobs = args.jobs
    if args.corridor_length is not None:
        m.corridor_length = args.corridor_length
    if args.instances is not None:
        m.instances = args.instances
    if args.configs is not None:
        m.configs = _csv_list(args.configs)
        unknown = set(m.configs) - set(ALL_CONFIG_IDS)
        if unknown:
            raise UsageError(f"unknown configurations {sorted(unknown)}")
    out = FsPath(args.out or f"out/{m.name}")
    _finish_manifest(m, out)
    rows = harness.collect_training_data(m, out)
    bad = [r for r in rows if r["outcome"] != "goal"]
    print(f"{len(rows)} missions, {len(bad)} without reaching the goal; logs in {out / 'logs'}")
    for r in bad:
        print(f"  {r['config_id']} {r['env_id']}: {r['outcome']}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = FsPath(args.data_dir)
    if not (data / "env_index.json").is_file():
        raise UsageError(f"{data} holds no collected data (env_index.json missing)")
    if args.degree < 1:
        raise UsageError("--degree must be >= 1")
    _check_threshold(args.threshold)
    out = FsPath(args.out or data)
    table = harness.train_all(data, out, degree=args.degree, threshold=args.threshold)
    print(f"{'config_id':<14} {'r2':>7} {'mse':>8} {'rows':>6}")
    for r in table:
        print(f"{r['config_id']:<14} {r['r2']:7.3f} {r['mse']:8.4f} {r['rows']:6d}")
    print(f"models, scores.csv and kb.json in {out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    m = _load_manifest(args)
    if args.seed is not None:
        m.base_seed = args.seed
    if args.jobs is not None:
        m.jobs = args.jobs
    if args.systems is not None:
        m.systems = _csv_list(args.systems)
    if args.reps is not None:
        m.repetitions = args.reps
    if args.missions is not None:
        m.mission_types = _csv_list(args.missions, int)
    if args.kb is not None:
        m.kb = args.kb
    if args.models_dir is not None:
        m.models_dir = args.models_dir
    if args.mode is not None:
        m.mros_qm_mode = args.mode
    _check_threshold(args.threshold)
    if args.threshold is not None:
        m.threshold = args.threshold
    m.latencies = _latencies(args, m.latencies)
    if m.kb != "paper" and not FsPath(m.kb).is_file():
        raise UsageError(f"knowledge base not found: {m.kb}")
    out = FsPath(args.out or f"out/{m.name}")
    _finish_manifest(m, out)
    kb = harness.load_kb(m.kb, m.models_dir, m.threshold)
    rep = harness.run_benchmark(m, kb, out)
    harness.report(rep, out)
    print((out / "summary.md").read_text(), end="")
    return EXIT_OK


def cmd_sweep_degree(args) -> int:
    data = FsPath(args.data_dir)
    if not (data / "env_index.json").is_file():
        raise UsageError(f"{data} holds no collected data (env_index.json missing)")
    degrees = parse_degrees(args.degrees)
    rows = harness.sweep_degrees(data, degrees)
    print(f"{'degree':>6} {'r2':>7} {'mse':>8}")
    for r in rows:
        print(f"{r['degree']:6d} {r['r2']:7.3f} {r['mse']:8.4f}")
    if args.out:
        harness._write_csv(FsPath(args.out), ["degree", "r2", "mse"],
                           [[r["degree"], harness._fmt(r["r2"]), harness._fmt(r["mse"])] for r in rows])
    return EXIT_OK


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": message, "kind": kind, "exit": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except (CtxNavError, OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
