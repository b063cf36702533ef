"""Command-line interface: registry, configuration, outputs and exit codes."""

import csv
import json
import subprocess
import sys
import time

import pytest

from catcoh import cli
from catcoh.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, REGISTRY, UsageError, main, parse_config_text

SMALL_JC = ["-p", "m=5,7", "-p", "k_max=60", "-p", "cross_check_max_m=5", "-p", "cross_check_k=40"]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in REGISTRY:
        assert name in out


def test_help_mentions_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--param", "--config", "--seed", "--out"):
        assert flag in out


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "catcoh", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "jc-decay" in proc.stdout


class TestOutputs:
    def test_byte_identical(self, tmp_path):
        args = ["run", "catalytic-invariance", "--seed", "7", "-p", "uses=5"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        for fname in ("uses.csv", "summary.json"):
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()

    def test_seed_changes_output(self, tmp_path):
        for s in ("1", "2"):
            main(["run", "catalytic-invariance", "--seed", s, "-p", "uses=3", "--out",
                  str(tmp_path / s)])
        assert (tmp_path / "1" / "uses.csv").read_bytes() != (tmp_path / "2" / "uses.csv").read_bytes()

    def test_sequential_prep_column(self, tmp_path):
        assert main(["run", "sequential-prep", "-p", "k=30", "--out", str(tmp_path)]) == EXIT_OK
        rows = read_csv(tmp_path / "fidelity.csv")
        assert rows[0] == ["k", "fidelity", "energy"]
        assert len(rows) == 32
        assert all(abs(float(r[1]) - 0.99) <= 1e-12 for r in rows[1:])

    def test_jc_outputs(self, tmp_path):
        assert main(["run", "jc-decay", *SMALL_JC, "--out", str(tmp_path)]) == EXIT_OK
        rows = read_csv(tmp_path / "fidelity.csv")
        assert rows[0] == ["m", "k", "fidelity"]
        assert len(rows) == 1 + 2 * 61
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["extra"]["reference_line"] == 0.99
        assert summary["passed"] is True
        assert summary["params"]["m"] == [5, 7]
        assert "version" in summary

    def test_workers_invariance(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CATCOH_WORKERS", "1")
        main(["run", "jc-decay", *SMALL_JC, "--out", str(tmp_path / "w1")])
        monkeypatch.setenv("CATCOH_WORKERS", "2")
        main(["run", "jc-decay", *SMALL_JC, "--out", str(tmp_path / "w2")])
        for fname in ("fidelity.csv", "lifetime.csv", "summary.json"):
            assert (tmp_path / "w1" / fname).read_bytes() == (tmp_path / "w2" / fname).read_bytes()

    def test_infinite_lifetime_serialised(self, tmp_path):
        main(["run", "jc-decay", "-p", "m=5", "-p", "k_max=25", "-p", "threshold=0.0",
              "--out", str(tmp_path)])
        assert read_csv(tmp_path / "lifetime.csv")[1] == ["5", "inf"]
        json.loads((tmp_path / "summary.json").read_text())


class TestConfiguration:
    def test_key_value_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# short run\nk = 12\nL=10\n")
        assert main(["run", "sequential-prep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "summary.json").read_text())["params"]["L"] == 10

    def test_json_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"k": 5, "seed": 3}))
        assert main(["run", "sequential-prep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 3

    def test_param_overrides_config(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("k = 12\n")
        main(["run", "sequential-prep", "--config", str(cfg), "-p", "k=4", "--out", str(tmp_path)])
        assert json.loads((tmp_path / "summary.json").read_text())["params"]["k"] == 4

    def test_unknown_key_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("k = 3\nbogus = 1\n")
        assert main(["run", "sequential-prep", "--config", str(cfg)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert "line 2" in err and "bogus" in err

    def test_bad_value(self, capsys):
        assert main(["run", "sequential-prep", "-p", "k=abc"]) == EXIT_USAGE
        assert "'k'" in capsys.readouterr().err

    def test_non_integer_for_int(self):
        assert main(["run", "sequential-prep", "-p", "k=2.5"]) == EXIT_USAGE

    def test_unknown_experiment(self, capsys):
        assert main(["run", "nope"]) == EXIT_USAGE
        assert "unknown experiment" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["run", "sequential-prep", "--config", str(tmp_path / "none")]) == EXIT_USAGE

    def test_invalid_physics_parameters(self):
        assert main(["run", "sequential-prep", "-p", "L=0"]) == EXIT_USAGE

    def test_bad_json(self):
        with pytest.raises(UsageError, match="line"):
            parse_config_text('{"k": ', "x.json")

    def test_missing_equals(self):
        with pytest.raises(UsageError, match="line 1"):
            parse_config_text("k 3")

    def test_list_values(self):
        assert cli.resolve_params(REGISTRY["jc-decay"], {"m": ("[5, 9]", "t")})["m"] == [5, 9]
        assert cli.resolve_params(REGISTRY["jc-decay"], {"m": ("5,9", "t")})["m"] == [5, 9]

    def test_bad_workers_env(self, monkeypatch):
        monkeypatch.setenv("CATCOH_WORKERS", "many")
        assert main(["run", "jc-decay", *SMALL_JC]) == EXIT_USAGE


def test_failed_assertion_exit_code(monkeypatch, capsys):
    original = cli.ExperimentRecord.check

    def strict(self, name, lhs, rhs, tol, relation="<="):
        original(self, name, lhs + 1.0 if relation == "<=" else lhs, rhs, tol, relation)

    monkeypatch.setattr(cli.ExperimentRecord, "check", strict)
    assert main(["run", "sequential-prep", "-p", "k=3"]) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_default_experiments_fast_and_passing(name):
    t0 = time.perf_counter()
    rec = cli.run(name, seed=0)
    assert time.perf_counter() - t0 < 60
    assert rec.passed, [a.to_dict() for a in rec.assertions if not a.passed]
