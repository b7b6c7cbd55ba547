"""End-to-end command-line tests.

Runs the real pipeline in-process against the bundled corpus at desk scale,
then pins exit codes for stage-order violations, validation failures and IO
failures.  One subprocess test covers the installed console script.
"""

from __future__ import annotations

import csv
import json
import subprocess
import sys
import time

import pytest

from loophound import __version__, corpus_path
from loophound.cli import main
from loophound.explorer import read_jsonl
from loophound.policy import read_policy_report

from conftest import TOY_RULESET, TOY_SCENARIO


@pytest.fixture(scope="session")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_docs")
    ruleset = root / "toy_rules.lhl"
    scenario = root / "toy_scenario.lhl"
    ruleset.write_text(TOY_RULESET, encoding="utf-8")
    scenario.write_text(TOY_SCENARIO, encoding="utf-8")
    return ruleset, scenario


@pytest.fixture(scope="session")
def toy_run_dir(tmp_path_factory, toy_files):
    """A run directory holding only the explore output for the toy world."""
    ruleset, scenario = toy_files
    out = tmp_path_factory.mktemp("toy_run")
    code = main(
        [
            "explore",
            "--ruleset", str(ruleset),
            "--scenario", str(scenario),
            "--seed", "3",
            "--iterations", "10",
            "--expansions", "80",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory):
    """All six stages over the bundled corpus at desk scale."""
    out = tmp_path_factory.mktemp("pipeline")
    stages = [
        ["explore", "--seed", "7", "--iterations", "20", "--expansions", "200",
         "--out", str(out)],
        ["profile", "--min-distance", "5", "--out", str(out)],
        ["stats", "--out", str(out)],
        ["induce", "--out", str(out)],
        ["policy", "--out", str(out)],
        ["graph", "--out", str(out)],
    ]
    for argv in stages:
        assert main(argv) == 0, f"stage failed: {argv[0]}"
    return out


class TestPipeline:
    def test_all_outputs_written(self, pipeline_dir):
        for name in [
            "trajectories.jsonl",
            "profile.csv",
            "stats.csv",
            "hypothesis.json",
            "hypothesis.txt",
            "policy_report.json",
            "scheme.dot",
            "scheme_edges.csv",
            "manifest.json",
        ]:
            assert (pipeline_dir / name).exists(), name

    def test_single_manifest_records_every_stage(self, pipeline_dir):
        manifest = json.loads((pipeline_dir / "manifest.json").read_text())
        assert manifest["tool"] == "loophound"
        assert manifest["version"] == __version__
        assert set(manifest["stages"]) == {
            "explore", "profile", "stats", "induce", "policy", "graph",
        }
        assert len(manifest["ruleset_sha256"]) == 64
        assert len(manifest["scenario_sha256"]) == 64
        for record in manifest["stages"].values():
            assert "completed_at" in record

    def test_stats_columns_match_segment_count(self, pipeline_dir):
        manifest = json.loads((pipeline_dir / "manifest.json").read_text())
        segments = manifest["stages"]["profile"]["segments"]
        assert segments >= 2
        with open(pipeline_dir / "stats.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["ref", "type"] + [
            f"segment_{i}" for i in range(segments)
        ]

    def test_policy_report_is_consistent_with_trajectories(self, pipeline_dir):
        tset = read_jsonl(pipeline_dir / "trajectories.jsonl")
        complete = sum(1 for t in tset.trajectories if t.complete)
        payload = read_policy_report(pipeline_dir / "policy_report.json")
        assert payload["omega"]["size"] == complete
        assert payload["verdict"] in (
            "operationally_inefficient",
            "operationally_efficient",
            "undefined",
        )

    def test_graph_outputs_are_dot_and_csv(self, pipeline_dir):
        dot = (pipeline_dir / "scheme.dot").read_text()
        assert dot.startswith("digraph")
        assert "->" in dot
        with open(pipeline_dir / "scheme_edges.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["source", "target", "label", "weight"]
        assert len(rows) > 1

    def test_hypothesis_text_is_readable(self, pipeline_dir):
        text = (pipeline_dir / "hypothesis.txt").read_text()
        assert "taxScheme(A, B, C, D) :-" in text


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path, toy_files):
        ruleset, scenario = toy_files
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            argv = [
                "explore",
                "--ruleset", str(ruleset),
                "--scenario", str(scenario),
                "--seed", "11",
                "--iterations", "8",
                "--expansions", "60",
                "--threads", "1" if name == "a" else "3",
                "--out", str(out),
            ]
            started = time.monotonic()
            assert main(argv) == 0
            assert time.monotonic() - started < 10.0
            outputs.append((out / "trajectories.jsonl").read_bytes())
        assert outputs[0] == outputs[1]


class TestStageOrder:
    def test_graph_before_induce(self, tmp_path, capsys):
        assert main(["graph", "--out", str(tmp_path)]) == 3
        assert "run the induce stage first" in capsys.readouterr().err

    def test_profile_before_explore(self, tmp_path, capsys):
        assert main(["profile", "--out", str(tmp_path)]) == 3
        assert "run the explore stage first" in capsys.readouterr().err

    def test_stats_needs_profile(self, toy_run_dir, capsys):
        assert main(["stats", "--out", str(toy_run_dir)]) == 3
        assert "run the profile stage first" in capsys.readouterr().err

    def test_induce_without_u_plus_needs_profile(self, toy_run_dir, capsys):
        assert main(["induce", "--out", str(toy_run_dir)]) == 3
        assert "run the profile stage first" in capsys.readouterr().err

    def test_policy_needs_hypothesis(self, toy_run_dir, capsys):
        assert main(["policy", "--out", str(toy_run_dir)]) == 3
        assert "run the induce stage first" in capsys.readouterr().err


class TestValidationErrors:
    def test_zero_iterations(self, tmp_path, capsys):
        code = main(["explore", "--iterations", "0", "--out", str(tmp_path)])
        assert code == 1
        assert "iterations" in capsys.readouterr().err

    def test_min_distance_below_one(self, tmp_path, capsys):
        assert main(["profile", "--min-distance", "0", "--out", str(tmp_path)]) == 1
        assert "--min-distance" in capsys.readouterr().err

    def test_non_positive_peak_height(self, tmp_path, capsys):
        code = main(
            ["profile", "--peak-height", "0", "--out", str(tmp_path)]
        )
        assert code == 1
        assert "--peak-height" in capsys.readouterr().err

    def test_graph_top_k_below_one(self, tmp_path, capsys):
        assert main(["graph", "--top-k", "0", "--out", str(tmp_path)]) == 1
        assert "--top-k" in capsys.readouterr().err

    def test_rate_outside_unit_interval(self, tmp_path, capsys):
        bad = tmp_path / "bad.lhl"
        bad.write_text("rate usa 1.5.\n", encoding="utf-8")
        scenario = tmp_path / "s.lhl"
        scenario.write_text(TOY_SCENARIO, encoding="utf-8")
        assert main(["check", str(bad), str(scenario)]) == 1
        err = capsys.readouterr().err
        assert "1:6: error: rate for 'usa' outside [0, 1]: 1.5" in err

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "invalid choice" in capsys.readouterr().err

    def test_unknown_welfare_kind(self, tmp_path, capsys):
        assert main(["policy", "--welfare", "gdp", "--out", str(tmp_path)]) == 1
        assert "invalid choice" in capsys.readouterr().err


class TestIoErrors:
    def test_missing_input_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.lhl"
        code = main(["check", str(missing), str(missing)])
        assert code == 2
        assert "cannot read" in capsys.readouterr().err


class TestCheck:
    def test_corpus_documents_validate(self, capsys):
        code = main(
            ["check", str(corpus_path("table1.lhl")), str(corpus_path("scenario.lhl"))]
        )
        assert code == 0
        assert "ok: ruleset and state parse and validate" in capsys.readouterr().out


class TestConsoleScript:
    def test_version_via_installed_script(self):
        proc = subprocess.run(
            [sys.executable, "-m", "loophound.cli", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.strip() == f"loophound {__version__}"
