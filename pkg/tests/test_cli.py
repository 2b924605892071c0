"""CLI contract: exit codes, flag precedence, report artifacts."""

import csv
import json
import os

import pytest

from hybenc.cli import build_parser, main, resolve_config
from hybenc.diagnostics import REPRESENTATIONS


class TestExitCodes:
    def test_help_is_success(self):
        assert main(["--help"]) == 0
        assert main(["train", "--help"]) == 0

    def test_usage_error_is_one(self):
        assert main([]) == 1
        assert main(["unknown-command"]) == 1
        assert main(["train", "--steps", "notanumber"]) == 1
        assert main(["finetune"]) == 1  # missing required --checkpoint

    def test_runtime_error_is_two(self, tmp_path):
        missing = str(tmp_path / "nope.bin")
        assert main(["inspect-checkpoint", "--checkpoint", missing]) == 2
        assert main(["probe-padding", "--psm", "sideways",
                     "--out", str(tmp_path / "d.csv")]) == 2


class TestResolveConfig:
    def test_flags_override_config_file(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "encoder": {"D": 16, "depth": 2, "pattern": "MM", "n_h": 2,
                        "D_ff": 32, "N": 4, "k": 3, "V": 32, "T_max": 16,
                        "dtype": "float64"},
            "train": {"total_steps": 50},
        }))
        args = build_parser().parse_args(
            ["train", "--config", str(cfg_path), "--pattern", "MT",
             "--dtype", "f32", "--steps", "7", "--seed", "9"])
        enc, train = resolve_config(args)
        assert enc.pattern == "MT" and enc.dtype == "float32" and enc.D == 16
        assert train["total_steps"] == 7 and train["seed"] == 9

    def test_flat_config_file(self, tmp_path):
        cfg_path = tmp_path / "flat.json"
        cfg_path.write_text(json.dumps({"D": 16, "depth": 2, "pattern": "TT",
                                        "n_h": 2, "D_ff": 32, "N": 4, "k": 3,
                                        "V": 32, "T_max": 16}))
        args = build_parser().parse_args(["train", "--config", str(cfg_path)])
        enc, _ = resolve_config(args)
        assert enc.pattern == "TT" and enc.D == 16


@pytest.fixture(scope="module")
def train_run(tmp_path_factory):
    """One tiny end-to-end train run shared by the smoke tests."""
    out = str(tmp_path_factory.mktemp("cli") / "run")
    cfg = tmp_path_factory.mktemp("cli") / "c.json"
    cfg.write_text(json.dumps({"D": 16, "depth": 2, "pattern": "MT", "n_h": 2,
                               "D_ff": 32, "N": 4, "k": 3, "V": 32, "T_max": 32,
                               "dropout": 0.0, "dtype": "float32"}))
    rc = main(["train", "--config", str(cfg), "--steps", "5", "--out", out])
    assert rc == 0
    return out


class TestSmoke:
    def test_train_artifacts(self, train_run):
        assert os.path.exists(os.path.join(train_run, "checkpoint.bin"))
        assert os.path.exists(os.path.join(train_run, "metrics.csv"))
        with open(os.path.join(train_run, "run.log")) as f:
            events = [json.loads(line) for line in f]
        assert events[0]["event"] == "config"
        assert "encoder" in events[0]  # resolved config is logged
        assert events[-1]["event"] == "done"

    def test_inspect(self, train_run, capsys):
        rc = main(["inspect-checkpoint", "--checkpoint",
                   os.path.join(train_run, "checkpoint.bin")])
        assert rc == 0
        info = json.loads(capsys.readouterr().out)
        assert info["config"]["encoder"]["pattern"] == "MT"

    def test_finetune_then_eval(self, train_run, tmp_path, capsys):
        ft = str(tmp_path / "ft")
        rc = main(["finetune", "--checkpoint",
                   os.path.join(train_run, "checkpoint.bin"),
                   "--steps", "3", "--pool", "map", "--out", ft])
        assert rc == 0
        rc = main(["eval", "--checkpoint", os.path.join(ft, "classifier.bin"),
                   "--n", "8"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0.0 <= out["accuracy"] <= 1.0

    def test_probe_row_contract(self, tmp_path):
        out = str(tmp_path / "drift.csv")
        rc = main(["probe-padding", "--pattern", "MT", "--pads", "4,8",
                   "--psm", "pre+post,none", "--samples", "2", "--out", out])
        assert rc == 0
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * 2 * len(REPRESENTATIONS)

    def test_gen_corpus(self, tmp_path, capsys):
        out = str(tmp_path / "corpus.txt")
        rc = main(["gen-corpus", "--n", "10", "--vocab", "32", "--out", out])
        assert rc == 0
        lines = open(out).read().strip().splitlines()
        assert len(lines) == 10
        assert all(tok.isdigit() for tok in lines[0].split())

    def test_bench_validates_repeats(self, tmp_path):
        rc = main(["bench", "--patterns", "T", "--lengths", "8",
                   "--repeats", "3", "--out", str(tmp_path / "s.csv")])
        assert rc == 2
