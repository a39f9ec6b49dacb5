import json
import subprocess
import sys

import pytest

from bfns.cli import main
from bfns.experiment import DEFAULT_CONFIG

SMALL = {"params": {"n": 8}, "levels": [4, 8, 16], "N_ref": 128, "mc_samples": 2}


@pytest.fixture
def cfg_file(tmp_path):
    def write(data):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(data))
        return str(p)
    return write


class TestCli:
    def test_show_config_defaults(self, capsys):
        assert main(["show-config"]) == 0
        assert json.loads(capsys.readouterr().out) == json.loads(json.dumps(DEFAULT_CONFIG))

    def test_malformed_names_key(self, cfg_file, capsys):
        path = cfg_file({"params": {"solver": {"tol": 1e-10, "maxiter": 3}}})
        assert main(["run", path]) == 1
        assert "params.solver.maxiter" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.json")]) == 3
        assert "I/O error" in capsys.readouterr().err

    def test_bad_usage(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_run_and_plot(self, cfg_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", cfg_file(SMALL), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "lambda_hat =" in text
        assert (out / "summary.csv").exists()
        assert main(["plot", str(out / "summary.csv")]) == 0
        assert "set logscale xy" in capsys.readouterr().out

    def test_plot_rejects_non_summary(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        assert main(["plot", str(p)]) == 1

    def test_divergence_exit_code(self, cfg_file, tmp_path):
        data = dict(SMALL, params={"n": 8, "solver": {"max_iters": 1, "tol": 1e-14}})
        assert main(["run", cfg_file(data), "--out", str(tmp_path / "o")]) == 2

    def test_step_check(self, cfg_file, capsys):
        path = cfg_file(dict(SMALL, step_check={"trajectories": 1, "N": 8}))
        assert main(["step-check", path]) == 0
        assert capsys.readouterr().out.count("PASS") == 3

    def test_audit(self, cfg_file, tmp_path):
        path = cfg_file({"audit": {"samples": 100, "n": 8, "alphas": [1.0],
                                   "deltas": [0.25], "pointwise_samples": 1000}})
        out = tmp_path / "audit.csv"
        assert main(["audit", path, "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "inequality_id,alpha,delta,samples,constant,seed"
        assert len(rows) == 1 + 2 + 2 + 2 + 2

    def test_module_entry(self):
        r = subprocess.run([sys.executable, "-m", "bfns", "show-config"], capture_output=True,
                           text=True)
        assert r.returncode == 0 and '"N_ref": 512' in r.stdout
