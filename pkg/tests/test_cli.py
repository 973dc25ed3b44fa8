import csv
import json
from pathlib import Path

import pytest

from racksim import cli
from racksim.config import load

QUICK = str(Path(__file__).parent.parent / "configs" / "quick.yaml")
WEAR = str(Path(__file__).parent.parent / "configs" / "wear.yaml")
SHORT = ["--set", "duration_s=0.1"]


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", QUICK, "--out", str(out), *SHORT]) == 0
    for name in ("report.json", "latency_hist.csv", "wear.csv", "gc_log.csv"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["mode"] == "RACKBLOX"
    assert rep["duration_ns"] == 100_000_000
    assert str(out / "report.json") in capsys.readouterr().out


def test_seed_flag(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["run", QUICK, "--out", str(out), "--seed", "42", *SHORT]) == 0
    assert json.loads((out / "report.json").read_text())["seed"] == 42


def test_config_errors_exit_1(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["run", QUICK, "--set", "gc.nothing=1"]) == cli.EXIT_CONFIG
    assert cli.main(["run", QUICK, "--set", "no-equals"]) == cli.EXIT_CONFIG
    assert cli.main(["run", QUICK, "--set", "workload.write_ratio=3"]) == cli.EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_runtime_error_exit_2(tmp_path, monkeypatch, capsys):
    def boom(cfg, out):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_one", boom)
    assert cli.main(["run", QUICK, "--out", str(tmp_path)]) == cli.EXIT_RUNTIME
    assert "disk on fire" in capsys.readouterr().err


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as e:
        cli.main(["run"])
    assert e.value.code != 0


def test_sweep_write_ratio(tmp_path):
    out = tmp_path / "sw"
    vals = "0.0,0.25,0.5,0.75,1.0"
    assert cli.main(["sweep", QUICK, "--axis", "write_ratio", "--values", vals, "--out", str(out), *SHORT]) == 0
    reports = sorted(out.glob("*/report.json"))
    assert len(reports) == 5
    ratios = sorted(json.loads(p.read_text())["config"]["workload"]["write_ratio"] for p in reports)
    assert ratios == [0.0, 0.25, 0.5, 0.75, 1.0]
    # one seed shared by every run
    assert {json.loads(p.read_text())["seed"] for p in reports} == {3}
    with open(out / "summary.csv") as f:
        assert len(list(csv.DictReader(f))) == 5


def test_sweep_scheduler_pairs(tmp_path):
    out = tmp_path / "sch"
    args = ["sweep", QUICK, "--axis", "scheduler", "--values", "FIFO,DEADLINE,KYBER", "--out", str(out), *SHORT]
    assert cli.main(args) == 0
    reports = [json.loads(p.read_text()) for p in out.glob("*/report.json")]
    assert len(reports) == 6
    pairs = {(r["config"]["scheduler"]["variant"], r["config"]["scheduler"]["coordinated"]) for r in reports}
    assert pairs == {(v, c) for v in ("FIFO", "DEADLINE", "KYBER") for c in (True, False)}


def test_sweep_bad_inputs(tmp_path):
    base = ["sweep", QUICK, "--out", str(tmp_path), *SHORT]
    assert cli.main(base + ["--axis", "write_ratio", "--values", ""]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--axis", "warp_factor", "--values", "1,2"]) == cli.EXIT_CONFIG
    assert cli.main(base + ["--axis", "scheduler", "--values", "FIFO:sideways"]) == cli.EXIT_CONFIG


def test_expand_values():
    assert cli.expand_values("scheduler", "FIFO") == ["FIFO:baseline", "FIFO:coordinated"]
    assert cli.expand_values("scheduler", "KYBER:baseline") == ["KYBER:baseline"]
    assert cli.expand_values("write_ratio", "0.1, 0.2") == [0.1, 0.2]
    assert cli.expand_values("write_ratio", " , ") == []


def test_compare(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", QUICK, "--out", str(a), *SHORT, "--set", "mode=VDC-like"]) == 0
    assert cli.main(["run", QUICK, "--out", str(b), *SHORT]) == 0
    capsys.readouterr()
    table_path = tmp_path / "cmp.json"
    assert cli.main(["compare", str(a / "report.json"), str(b / "report.json"), "--out", str(table_path)]) == 0
    table = json.loads(table_path.read_text())
    assert "p99.9_ns" in table["latency_ratio"]["read"]
    assert json.loads(capsys.readouterr().out) == table


def test_compare_rejects_mismatched_workloads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", QUICK, "--out", str(a), *SHORT]) == 0
    assert cli.main(["run", QUICK, "--out", str(b), *SHORT, "--set", "workload.write_ratio=0.9"]) == 0
    assert cli.main(["compare", str(a / "report.json"), str(b / "report.json")]) == cli.EXIT_CONFIG
    assert cli.main(["compare", str(a / "report.json"), str(tmp_path / "none.json")]) == cli.EXIT_CONFIG


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = load(QUICK)
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RACKSIM_OUTPUT_DIR", raising=False)
    assert cli.output_dir(cfg, None) == Path("racksim-out") / "quick"
    monkeypatch.setenv("RACKSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.output_dir(cfg, None) == tmp_path / "env"
    assert cli.output_dir(cfg, str(tmp_path / "flag")) == tmp_path / "flag"
    assert (tmp_path / "flag").is_dir()


def test_wear_sim(tmp_path, capsys):
    out = tmp_path / "w"
    assert cli.main(["wear-sim", WEAR, "--out", str(out)]) == 0
    rep = json.loads((out / "wear_report.json").read_text())
    assert len(rep["runs"]) == 1
    assert (out / "wear.csv").exists()
    assert "max local lambda" in capsys.readouterr().out
