"""CLI contracts: exit codes, error prefixes, idempotence, config files."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from freqkd.cli import main

GEN_ARGS = ["--train-size", "160", "--test-size", "60", "--seed", "3"]
RUN_ARGS = ["--epochs", "2", "--batch", "32"]


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small dataset with a trained teacher, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    runs = root / "runs"
    assert run_cli("gen-data", "--out", str(data), *GEN_ARGS) == 0
    assert run_cli("train-uni", "--data", str(data), "--student-modality", "a",
                   "--out", str(runs), "--no-figures", *RUN_ARGS) == 0
    return {"root": root, "data": data, "runs": runs}


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert run_cli("--help") == 0
        out = capsys.readouterr().out
        assert "gen-data" in out and "distill" in out

    def test_subcommand_help_lists_flags(self, capsys):
        assert run_cli("distill", "--help") == 0
        out = capsys.readouterr().out
        for flag in ("--lambda1", "--lambda2", "--threshold", "--no-freq",
                     "--no-align", "--no-scale", "--no-log", "--low-loss",
                     "--high-loss", "--align-standardized",
                     "--dedup-student-band-ce", "--teacher",
                     "--student-modality", "--seed", "--out"):
            assert flag in out

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli("gen-data", "--bogus", "1") == 1
        assert "error:usage:" in capsys.readouterr().err

    def test_missing_required_flag(self, capsys):
        assert run_cli("distill", "--data", "x", "--out", "y") == 1
        err = capsys.readouterr().err
        assert "error:usage:" in err and "Usage" in err

    def test_missing_data_is_data_error(self, workspace, capsys):
        code = run_cli("train-uni", "--data", str(workspace["root"] / "nope"),
                       "--student-modality", "a",
                       "--out", str(workspace["root"] / "o"))
        assert code == 2
        assert "error:data:" in capsys.readouterr().err

    def test_inconsistent_toggles_are_config_error(self, workspace, capsys):
        code = run_cli("distill", "--data", str(workspace["data"]),
                       "--teacher", str(workspace["runs"] / "uni_a.ckpt"),
                       "--out", str(workspace["root"] / "o2"),
                       "--no-freq", *RUN_ARGS)
        assert code == 1
        assert "error:config:" in capsys.readouterr().err


class TestGenData:
    def test_idempotent(self, tmp_path):
        d1, d2 = tmp_path / "one", tmp_path / "two"
        assert run_cli("gen-data", "--out", str(d1), *GEN_ARGS) == 0
        assert run_cli("gen-data", "--out", str(d2), *GEN_ARGS) == 0
        for name in ("train.csv", "test.csv", "dataset.config.json"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_invalid_config_rejected(self, tmp_path, capsys):
        code = run_cli("gen-data", "--out", str(tmp_path / "x"),
                       "--classes", "1")
        assert code == 1
        assert "error:config:" in capsys.readouterr().err


class TestPipeline:
    def test_full_workflow(self, workspace):
        data, runs = str(workspace["data"]), workspace["runs"]
        assert run_cli("train-uni", "--data", data, "--student-modality", "b",
                       "--out", str(runs), "--no-figures", *RUN_ARGS) == 0
        assert run_cli("distill", "--data", data,
                       "--teacher", str(runs / "uni_a.ckpt"),
                       "--out", str(runs), "--no-figures", *RUN_ARGS) == 0
        report = json.loads((runs / "distill_b.report.json").read_text())
        assert report["kind"] == "distill"
        assert report["extra"]["teacher_modality"] == "a"
        assert 0.0 <= report["final_accuracy"] <= 1.0
        assert run_cli("eval", "--data", data,
                       "--checkpoint", str(runs / "distill_b.ckpt"),
                       "--out", str(runs)) == 0
        ev = json.loads((runs / "eval_b_test.json").read_text())
        assert ev["accuracy"] == report["final_accuracy"]

    def test_student_defaults_to_opposite_modality(self, workspace):
        report = workspace["runs"] / "uni_a.report.json"
        echo = json.loads(report.read_text())["config_echo"]
        assert echo["student_modality"] == "a"

    def test_eval_logits_recount(self, workspace):
        data, runs = str(workspace["data"]), workspace["runs"]
        assert run_cli("eval", "--data", data,
                       "--checkpoint", str(runs / "uni_a.ckpt"),
                       "--out", str(runs)) == 0
        ev = json.loads((runs / "eval_a_test.json").read_text())
        lines = (runs / "eval_a_test_logits.csv").read_text().splitlines()
        header = lines[0].split(",")
        n_logits = len([h for h in header if h.startswith("logit")])
        correct = total = 0
        for line in lines[1:]:
            parts = line.split(",")
            label = int(parts[1])
            logits = [float(x) for x in parts[3:]]
            best = 0
            for c in range(1, n_logits):
                if logits[c] > logits[best]:
                    best = c
            correct += int(best == label)
            total += 1
        assert ev["accuracy"] == correct / total

    def test_analyze_outputs(self, workspace, tmp_path):
        out = tmp_path / "analysis"
        assert run_cli("analyze", "--data", str(workspace["data"]),
                       "--out", str(out), "--no-figures") == 0
        payload = json.loads((out / "similarity.json").read_text())
        sim = payload["similarity"]
        assert sim["source"] == "generator-inputs"
        assert sim["mean_low"] > sim["mean_raw"]
        profile = (out / "mean_profile.csv").read_text().splitlines()
        assert profile[0] == "dim,mean_a,mean_b"
        assert len(profile) == 1 + 64
        table = (out / "similarity.csv").read_text().splitlines()
        assert table[0] == "id,label,cos_raw,cos_low,cos_high"

    def test_export_features(self, workspace, tmp_path):
        out = tmp_path / "export"
        assert run_cli("export-features", "--data", str(workspace["data"]),
                       "--split", "test", "--out", str(out)) == 0
        lines = (out / "features_test.csv").read_text().splitlines()
        assert lines[0].startswith("id,label,m,band,f0")
        assert len(lines) == 1 + 60 * 2 * 3  # samples x modalities x bands

    def test_figures_rendered(self, workspace, tmp_path):
        out = tmp_path / "figs"
        assert run_cli("analyze", "--data", str(workspace["data"]),
                       "--out", str(out)) == 0
        assert (out / "similarity.png").stat().st_size > 0
        assert (out / "mean_profile.png").stat().st_size > 0


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 9\ntrain-size = 100\ntest-size = 50\n"
                       "# comment line\nclasses = 4\n")
        out = tmp_path / "from-config"
        assert run_cli("gen-data", "--out", str(out), "--config", str(cfg),
                       "--classes", "5") == 0
        echo = json.loads((out / "dataset.config.json").read_text())
        assert echo["seed"] == 9
        assert echo["train_size"] == 100
        assert echo["num_classes"] == 5  # explicit flag beats config value

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("not-a-flag = 1\n")
        assert run_cli("gen-data", "--out", str(tmp_path / "x"),
                       "--config", str(cfg)) == 1
        assert "error:usage:" in capsys.readouterr().err

    def test_toggle_keys(self, tmp_path, workspace):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no-freq = true\nno-align = true\nno-scale = true\n"
                       "no-log = true\nepochs = 1\nbatch = 32\n")
        out = tmp_path / "toggles"
        code = run_cli("distill", "--data", str(workspace["data"]),
                       "--teacher", str(workspace["runs"] / "uni_a.ckpt"),
                       "--out", str(out), "--no-figures",
                       "--config", str(cfg))
        assert code == 0
        echo = json.loads((out / "distill_b.report.json").read_text())["config_echo"]
        assert echo["freq"] is False and echo["align"] is False


class TestFreshProcess:
    def test_console_entry_point(self, workspace):
        proc = subprocess.run(
            [sys.executable, "-m", "freqkd.cli", "eval",
             "--data", str(workspace["data"]),
             "--checkpoint", str(workspace["runs"] / "uni_a.ckpt"),
             "--out", str(workspace["root"] / "fresh")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        fresh = json.loads(
            (workspace["root"] / "fresh" / "eval_a_test.json").read_text())
        report = json.loads(
            (workspace["runs"] / "uni_a.report.json").read_text())
        assert fresh["accuracy"] == report["final_accuracy"]
