"""Command-line interface: exit codes, determinism and the collect -> train -> benchmark pipeline."""

from __future__ import annotations

import json

import pytest

from ctxnav.cli import build_parser, main, parse_degrees
from ctxnav.harness import Manifest

SUBCOMMANDS = ("gen-env", "run", "collect", "train", "benchmark", "sweep-degree")


def _error_line(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_gen_env_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-env", "--kind", "corridor", "--width", "3", "--clutter", "4", "--seed", "7",
                     "--length", "12", "--out", str(tmp_path / name)]) == 0
    for ext in (".grid", ".json"):
        assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()


def test_run_missing_map(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--map", str(tmp_path / "none.grid"), "--out", str(out)]) == 1
    assert not out.exists()
    err = _error_line(capsys)
    assert err["exit"] == 1 and err["kind"] == "usage"


def test_run_deterministic(tmp_path, capsys):
    stem = tmp_path / "map"
    main(["gen-env", "--clutter", "4", "--seed", "2", "--length", "12", "--out", str(stem)])
    for name in ("r1", "r2"):
        assert main(["run", "--map", str(stem) + ".grid", "--config", "dwa_v1_a0_b1", "--mode", "mod0",
                     "--out", str(tmp_path / name)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["outcome"] in ("goal", "collision", "timeout")
    for f in ("run.csv", "decisions.csv"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_run_model_mode_without_models(tmp_path, capsys):
    stem = tmp_path / "map"
    main(["gen-env", "--length", "12", "--out", str(stem)])
    assert main(["run", "--map", str(stem) + ".grid", "--mode", "mod1", "--out", str(tmp_path / "o")]) == 2
    assert _error_line(capsys)["kind"] == "MissingModel"


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["gen-env", "--bogus"],
    ["gen-env", "--width", "-1"],
    ["run", "--map", "x.grid", "--mode", "mod7"],
    ["train", "--data-dir", "/nonexistent"],
    ["benchmark", "--threshold", "1.5"],
    ["sweep-degree", "--data-dir", "/nonexistent"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert _error_line(capsys)["exit"] == 1


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_documents_defaults(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    assert "default" in text
    if cmd == "train":
        assert "default: 4" in text and "default: 0.6" in text
    if cmd == "benchmark":
        for ms in ("97", "520", "16", "3575"):
            assert f"default: {ms}" in text
        assert "default: 0.6" in text


def test_parse_degrees():
    assert parse_degrees("1..6") == [1, 2, 3, 4, 5, 6]
    assert parse_degrees("2,4") == [2, 4]


def test_parser_lists_every_subcommand():
    text = build_parser().format_help()
    assert all(c in text for c in SUBCOMMANDS)


def test_pipeline_collect_train_benchmark(tmp_path, capsys):
    # train emits a KB that benchmark consumes as is; benchmark repeats byte-identically
    man = tmp_path / "m.json"
    Manifest(name="p", instances=2, corridor_widths=[3.0], corridor_clutter=[4], corridor_length=10.0).save(man)
    data = tmp_path / "data"
    assert main(["collect", "--manifest", str(man), "--out", str(data)]) == 0
    assert json.loads((data / "manifest.json").read_text())["instances"] == 2
    assert main(["train", "--data-dir", str(data), "--out", str(tmp_path / "train")]) == 0
    assert main(["sweep-degree", "--data-dir", str(data), "--degrees", "1,2",
                 "--out", str(tmp_path / "sweep.csv")]) == 0
    assert (tmp_path / "sweep.csv").read_text().startswith("degree,r2,mse\n")
    outs = []
    for name in ("b1", "b2"):
        out = tmp_path / name
        assert main(["benchmark", "--kb", str(tmp_path / "train" / "kb.json"), "--systems", "mros_qm,s1",
                     "--reps", "1", "--missions", "1", "--out", str(out)]) == 0
        outs.append(out)
    for f in ("benchmark.csv", "summary.md", "logs/mros_qm_m1_r00.csv", "logs/mros_qm_m1_r00_decisions.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    echoed = json.loads((outs[0] / "manifest.json").read_text())
    assert echoed["repetitions"] == 1 and echoed["systems"] == ["mros_qm", "s1"]
