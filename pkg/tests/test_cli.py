import json
import os
import subprocess
import sys

import pytest

from heterorobust.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "100", "--d", "6", "--h", "0.5", "--classes", "2", "--seed", "1",
                 "--out-dir", str(d / "ds")]) == 0
    return d


def test_pipeline(workdir, capsys):
    d = workdir
    ds = str(d / "ds")
    assert main(["stats", "--dataset", ds]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["edge_homophily"] == 0.5
    assert main(["train", "--dataset", ds, "--arch", "sage_separate", "--max-iters", "30",
                 "--out-dir", str(d / "tr")]) == 0
    assert (d / "tr" / "model.ckpt").exists()
    assert main(["attack", "--dataset", ds, "--splits", str(d / "tr" / "splits.json"), "--target", "3",
                 "--out-dir", str(d / "at")]) == 0
    assert main(["defend", "--dataset", ds, "--rank", "5", "--out-dir", str(d / "df")]) == 0
    assert main(["certify", "--dataset", ds, "--checkpoint", str(d / "tr" / "model.ckpt"), "--splits",
                 str(d / "tr" / "splits.json"), "--nodes", "3", "--n0", "20", "--n1", "200",
                 "--out-dir", str(d / "ce")]) == 0
    capsys.readouterr()


def test_theory_verify(capsys, tmp_path):
    assert main(["theory", "verify", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["fail_count"] == 0
    assert (tmp_path / "theory_report.json").exists()


def test_run_from_config(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("synth_n = 100\nsynth_d = 6\nsynth_h = 0.5\nsynth_classes = 2\nmodels = gcn\n"
                   "scenarios = clean\nmax_iters = 20\npatience = 20\nrepetitions = 1\nnum_targets = 3\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "accuracy.csv").exists()
    capsys.readouterr()


def test_config_supplies_defaults(workdir, tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(f"dataset = {workdir / 'ds'}\narch = mlp\nmax_iters = 5\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "m")]) == 0
    capsys.readouterr()
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_option = 1\n")
    assert main(["train", "--config", str(bad)]) == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["synth", "--n", "7", "--d", "3", "--out-dir", str(tmp_path)]) == 2     # infeasible spec
    assert main(["bogus"]) == 2
    assert main(["run"]) == 2                                                           # needs --config
    bad = tmp_path / "exp.cfg"
    bad.write_text("models = transformer\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["stats", "--dataset", str(tmp_path / "missing")]) == 3
    capsys.readouterr()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "heterorobust", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "theory" in out.stdout
