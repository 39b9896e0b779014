from __future__ import annotations

import json
from pathlib import Path

import pytest

from guardad.cli import main

RUN_ARGS = [
    "run",
    "--template",
    "ApproachingCyclist",
    "--count",
    "6",
    "--policy",
    "faulty:blind=0.7,comply=0.9",
    "--mode",
    "full",
    "--n",
    "4",
    "--k",
    "2",
    "--seed",
    "42",
]


def read_tree(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


class TestRun:
    def test_smoke(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(RUN_ARGS + ["--out", str(out)]) == 0
        files = read_tree(out)
        assert "metrics.json" in files
        assert sum(1 for name in files if name.endswith(".trace.jsonl")) == 6
        metrics = json.loads(files["metrics.json"])
        assert metrics["episodes"] == 6
        assert "accident_rate" in capsys.readouterr().out

    def test_missing_catalog_exits_one(self, tmp_path, capsys):
        code = main(["run", "--rules", "/no/such.gsl", "--template", "ClearRoad", "--out", str(tmp_path / "o")])
        assert code == 1
        assert capsys.readouterr().err.startswith("error[missing-catalog]")

    def test_unknown_template_exits_one(self, tmp_path, capsys):
        code = main(["run", "--template", "WrongTurn", "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error[unknown-template]" in capsys.readouterr().err

    def test_no_scenarios_exits_one(self, tmp_path, capsys):
        assert main(["run", "--out", str(tmp_path / "o")]) == 1
        assert "error[no-scenarios]" in capsys.readouterr().err

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(RUN_ARGS + ["--out", str(out1)]) == 0
        assert main(RUN_ARGS + ["--out", str(out2)]) == 0
        assert read_tree(out1) == read_tree(out2)

    def test_env_seed_override(self, tmp_path, monkeypatch):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        monkeypatch.setenv("GUARDAD_SEED", "42")
        assert main(RUN_ARGS[:-1] + ["7", "--out", str(out1)]) == 0  # --seed 7 ignored
        monkeypatch.delenv("GUARDAD_SEED")
        assert main(RUN_ARGS + ["--out", str(out2)]) == 0
        assert read_tree(out1) == read_tree(out2)

    def test_unguarded_flag(self, tmp_path):
        out = tmp_path / "o"
        args = [
            "run", "--template", "ApproachingCyclist", "--count", "3",
            "--policy", "faulty:blind=1.0,comply=0.0", "--seed", "1",
            "--unguarded", "--out", str(out),
        ]
        assert main(args) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["accident_rate"] == 1.0
        assert metrics["intervention_rate"] == 0.0


class TestExplain:
    @pytest.fixture
    def trace_path(self, tmp_path) -> Path:
        out = tmp_path / "out"
        args = [
            "run", "--template", "RedLightIntersection", "--count", "1",
            "--policy", "faulty:blind=1.0,comply=1.0", "--seed", "3", "--out", str(out),
        ]
        assert main(args) == 0
        return next(p for p in out.iterdir() if p.name.endswith(".trace.jsonl"))

    def test_violating_step_shows_prompt(self, trace_path, capsys):
        records = [json.loads(line) for line in trace_path.read_text().splitlines()[:-1]]
        violating = next(r for r in records if r["delta"])
        assert main(["explain", "--trace", str(trace_path), "--step", str(violating["t"])]) == 0
        rendered = capsys.readouterr().out
        assert "prompt:" in rendered
        assert "Red light detected" in rendered
        assert "RevisedByPrompt" in rendered

    def test_clean_step_has_no_prompt(self, trace_path, capsys):
        assert main(["explain", "--trace", str(trace_path), "--step", "0"]) == 0
        rendered = capsys.readouterr().out
        assert "prompt:" not in rendered
        assert "Accepted" in rendered

    def test_step_out_of_range(self, trace_path, capsys):
        assert main(["explain", "--trace", str(trace_path), "--step", "999"]) == 1
        assert "error[step-out-of-range]" in capsys.readouterr().err


class TestGenCheckEval:
    def test_gen_then_run_from_files(self, tmp_path, capsys):
        scen_dir = tmp_path / "scenarios"
        assert main(["gen", "--template", "VehicleCutIn", "--count", "3", "--seed", "11", "--out", str(scen_dir)]) == 0
        files = sorted(scen_dir.glob("*.scenario.json"))
        assert len(files) == 3
        out = tmp_path / "out"
        args = ["run", "--scenario", str(scen_dir / "*.scenario.json"), "--policy", "oracle", "--out", str(out)]
        assert main(args) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["episodes"] == 3 and metrics["accident_rate"] == 0.0

    def test_check_ok(self, tmp_path, capsys):
        path = tmp_path / "cat.gsl"
        path.write_text('constraint C allow {Stop} severity 3 says "s"\n')
        assert main(["check", "--rules", str(path)]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_check_reports_parse_error(self, tmp_path, capsys):
        path = tmp_path / "bad.gsl"
        path.write_text("constraint C allow {Stop severity 3\n")
        assert main(["check", "--rules", str(path)]) == 1
        err = capsys.readouterr().err
        assert "error[bad-catalog]" in err and "line 1" in err

    def test_eval_matches_run_metrics(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(RUN_ARGS + ["--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["eval", "--traces", str(out / "*.trace.jsonl")]) == 0
        recomputed = json.loads(capsys.readouterr().out)
        assert recomputed == json.loads((out / "metrics.json").read_text())

    def test_eval_missing_trace(self, tmp_path, capsys):
        assert main(["eval", "--traces", str(tmp_path / "nope.jsonl")]) == 1
        assert "error[missing-trace]" in capsys.readouterr().err


class TestSweep:
    def test_six_rows_for_n_range(self, tmp_path, capsys):
        args = [
            "sweep", "--template", "SuddenPedestrianCrossing", "--count", "2",
            "--policy", "faulty:blind=1.0,comply=0.0", "--seed", "5",
            "--n-range", "1:6", "--k-range", "2:2",
        ]
        assert main(args) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].split("\t")[:2] == ["n", "k"]
        assert len(lines) == 1 + 6
        assert [row.split("\t")[0] for row in lines[1:]] == ["1", "2", "3", "4", "5", "6"]

    def test_row_matches_direct_run(self, tmp_path, capsys):
        common = [
            "--template", "ApproachingCyclist", "--count", "3",
            "--policy", "faulty:blind=0.7,comply=0.9", "--seed", "21",
        ]
        assert main(["sweep", *common, "--n-range", "1:2", "--k-range", "2:2"]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        header = rows[0].split("\t")
        row_n1 = dict(zip(header, rows[1].split("\t")))
        out = tmp_path / "direct"
        assert main(["run", *common, "--n", "1", "--k", "2", "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert row_n1["accident_rate"] == f"{metrics['accident_rate']:.6f}"
        assert row_n1["task_score"] == f"{metrics['task_score']:.6f}"

    def test_empty_range_exits_one(self, capsys):
        args = ["sweep", "--template", "ClearRoad", "--n-range", "5:1"]
        assert main(args) == 1
        assert "error[empty-range]" in capsys.readouterr().err
