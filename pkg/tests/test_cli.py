import filecmp
import os
import subprocess
import sys

import pytest

from trendhmm.cli import main

CFG = """
[experiment]
kind = rate
n_values = 300, 600
n_replications = 2
master_seed = 7

[truth]
variances = 1, 2
transition = 0.7, 0.3; 0.2, 0.8
trend_scale = 600
trend_1 = 0
trend_2 = 2, -0.004, 1e-5

[fit]
degree_bound = 2
n_restarts = 2

[diagnostics]
segments = 1, 2, 4
homogenization_n = 400
forgetting_steps = 20
integrated_grid = 4
mc_length = 2000
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CFG)
    return path


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


class TestCommands:
    def test_simulate_fit(self, tmp_path, cfg):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
        data = tmp_path / "s" / "trajectory.csv"
        assert data.read_text().startswith("t,y,x,b\n")
        assert (tmp_path / "s" / "truth.cfg").exists()
        assert main(["fit", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "f")]) == 0
        assert "loglik = " in (tmp_path / "f" / "fit.txt").read_text()
        assert (tmp_path / "f" / "fit.cfg").read_text().startswith("[model]")

    @pytest.mark.parametrize("command", ["simulate", "experiment", "diagnose", "fit"])
    def test_byte_identical_reruns(self, tmp_path, cfg, command):
        extra = []
        if command == "fit":
            main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")])
            extra = ["--data", str(tmp_path / "s" / "trajectory.csv")]
        for out in ("a", "b"):
            assert main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra]) == 0
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_experiment_kinds(self, tmp_path, cfg):
        main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r"), "--jobs", "2", "--cold-start"])
        assert (tmp_path / "r" / "errors.csv").exists() and (tmp_path / "r" / "slopes.csv").exists()
        fixed = tmp_path / "fixed.cfg"
        fixed.write_text(CFG.replace("kind = rate", "kind = fixed_n"))
        assert main(["experiment", "--config", str(fixed), "--out", str(tmp_path / "x")]) == 0
        assert "minimal tube size" in (tmp_path / "x" / "report.txt").read_text()

    def test_diagnose_outputs(self, tmp_path, cfg):
        assert main(["diagnose", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        names = sorted(p.name for p in (tmp_path / "d").iterdir())
        assert names == ["block_gap.csv", "forgetting.csv", "homogenization.csv", "report.txt"]
        rows = (tmp_path / "d" / "homogenization.csv").read_text().splitlines()
        assert rows[-1].startswith("400,") and float(rows[-1].split(",")[1]) == 0.0


class TestExitCodes:
    def test_validation_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text(CFG.replace("variances = 1, 2", "variances = 1, -2"))
        assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "truth.variances" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["experiment"])
        assert info.value.code == 1

    def test_bad_jobs(self, tmp_path, cfg):
        assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path), "--jobs", "0"]) == 1

    def test_runtime_failure(self, tmp_path):
        data = tmp_path / "y.csv"
        data.write_text("y\n" + "".join(f"{v}\n" for v in range(40)))
        fit_cfg = tmp_path / "fit.cfg"
        fit_cfg.write_text("[fit]\nn_states = 3\ndegree_bound = 2\nn_restarts = 2\n")
        assert main(["fit", "--config", str(fit_cfg), "--data", str(data), "--out", str(tmp_path / "o")]) == 2


class TestSeedOverride:
    def test_env_seed(self, tmp_path, cfg, monkeypatch):
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
        monkeypatch.setenv("TRENDHMM_SEED", "7")
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
        monkeypatch.setenv("TRENDHMM_SEED", "8")
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c")])
        a, b, c = (tmp_path / d / "trajectory.csv" for d in "abc")
        assert a.read_bytes() == b.read_bytes() != c.read_bytes()

    def test_bad_env_seed(self, tmp_path, cfg, monkeypatch):
        monkeypatch.setenv("TRENDHMM_SEED", "abc")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_console_script(tmp_path, cfg):
    proc = subprocess.run(
        [sys.executable, "-m", "trendhmm.cli", "simulate", "--config", str(cfg), "--out", str(tmp_path / "s")],
        capture_output=True, text=True, env={**os.environ, "TRENDHMM_SEED": ""},
    )
    assert proc.returncode == 0, proc.stderr
