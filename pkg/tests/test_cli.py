import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from shootopt.cli import CSV_HEADER, RunConfig, main, run_compare, run_sweep
from shootopt.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def mini_block_config(**overrides):
    cfg = {
        "problem": "block",
        "tf": 1.0,
        "N": 16,
        "schemes": ["1st-euler", "2nd-euler", "1st-rk4", "2nd-rk4"],
        "cost": {"Q": [0.0, 0.0], "R": [2.0]},
        "boundary": {"initial": [0.0, 0.0], "terminal": [1.0, 0.0]},
        "ref_multiplier": 4,
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


class TestRunConfig:
    def test_shipped_configs_validate(self):
        for path in sorted(CONFIG_DIR.glob("*.json")):
            RunConfig.load(path)

    def test_unknown_top_key_named(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(horizon=3))
        assert "horizon" in str(err.value)

    def test_unknown_problem_named(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(problem="pendulum"))
        assert "problem" in str(err.value)

    def test_empty_schemes_rejected(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(schemes=[]))
        assert "schemes" in str(err.value)

    def test_unknown_scheme_named(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(schemes=["3rd-euler"]))
        assert "3rd-euler" in str(err.value)

    def test_bad_cost_shape_named(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(cost={"Q": [1.0], "R": [2.0]}))
        assert "cost.Q" in str(err.value)

    def test_bad_solver_key_named(self):
        with pytest.raises(ConfigError) as err:
            RunConfig.from_dict(mini_block_config(solver={"tol": 1e-3}))
        assert "solver.tol" in str(err.value)

    def test_terminal_nulls_make_mask(self):
        cfg = RunConfig.from_dict(
            mini_block_config(boundary={"initial": [0, 0], "terminal": [1.0, None]})
        )
        np.testing.assert_array_equal(cfg.terminal_mask, [True, False])


class TestCompare:
    def test_block_rows_and_ordering(self, tmp_path):
        config = RunConfig.from_dict(mini_block_config())
        rows, all_ok = run_compare(config, tmp_path)
        assert all_ok
        assert [r.scheme for r in rows] == list(config.schemes)
        by_scheme = {r.scheme: r for r in rows}
        assert by_scheme["2nd-euler"].eta_total < by_scheme["1st-euler"].eta_total
        csv = (tmp_path / "compare.csv").read_text().splitlines()
        assert csv[0] == CSV_HEADER
        assert len(csv) == 5
        eff = json.loads((tmp_path / "effective-config.json").read_text())
        assert eff["solver"]["feas_tol"] == 1e-8
        assert eff["ref_multiplier"] == 4

    def test_empty_schemes_no_output(self, tmp_path):
        cfg_path = write_config(tmp_path, mini_block_config(schemes=[]))
        code = main(["compare", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert not (tmp_path / "o").exists()

    def test_failed_solve_row_has_empty_eta(self, tmp_path):
        # one outer iteration cannot reach feasibility on this problem
        config = RunConfig.from_dict(mini_block_config(
            schemes=["2nd-euler"], solver={"max_outer": 1}))
        rows, all_ok = run_compare(config, tmp_path)
        assert not all_ok
        assert rows[0].status != "optimal"
        assert rows[0].eta_total is None
        line = (tmp_path / "compare.csv").read_text().splitlines()[1]
        fields = line.split(",")
        assert fields[4] == ""  # eta_total column empty
        assert fields[8] != "optimal"

    def test_exit_code_3_on_failure(self, tmp_path):
        cfg_path = write_config(tmp_path, mini_block_config(
            schemes=["2nd-euler"], solver={"max_outer": 1}))
        code = main(["compare", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")])
        assert code == 3

    def test_n_list_rejected(self, tmp_path):
        cfg = mini_block_config()
        del cfg["N"]
        cfg["N_list"] = [8, 16]
        config = RunConfig.from_dict(cfg)
        with pytest.raises(ConfigError):
            run_compare(config, tmp_path)


class TestSweep:
    def test_row_count_and_monotone_eta(self, tmp_path):
        cfg = mini_block_config(schemes=["2nd-euler", "1st-euler"])
        del cfg["N"]
        cfg["N_list"] = [8, 16, 32]
        config = RunConfig.from_dict(cfg)
        rows, all_ok = run_sweep(config, tmp_path)
        assert all_ok
        assert len(rows) == 2 * 3
        euler2 = [r.eta_total for r in rows if r.scheme == "2nd-euler"]
        assert euler2[0] >= euler2[1] >= euler2[2]
        csv = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(csv) == 7

    def test_plot_references_all_series(self, tmp_path):
        cfg = mini_block_config(schemes=["2nd-euler", "2nd-rk4"], plot=True)
        del cfg["N"]
        cfg["N_list"] = [8, 16, 32]
        config = RunConfig.from_dict(cfg)
        run_sweep(config, tmp_path)
        svg = (tmp_path / "sweep.svg").read_text()
        assert svg.startswith("<svg")
        for scheme in ["2nd-euler", "2nd-rk4"]:
            assert scheme in svg


class TestStudy:
    def test_study_runs_and_writes(self, tmp_path):
        cfg_path = write_config(tmp_path, {
            "study": {"rate": 1.0, "drive": 1.0, "u": 0.3, "q0": 0.2, "v0": 1.0},
            "tf": 1.0,
            "N_list": [10, 20, 40],
            "schemes": ["2nd-euler", "2nd-rk4"],
        })
        code = main(["study", "--config", str(cfg_path), "--out", str(tmp_path / "s")])
        assert code == 0
        lines = (tmp_path / "s" / "study.csv").read_text().splitlines()
        assert lines[0] == "scheme,N,h,error,bound,slope"
        assert len(lines) == 1 + 2 * 3

    def test_single_scheme_runs_only_that_scheme(self, tmp_path):
        cfg_path = write_config(tmp_path, {
            "study": {"rate": 1.0, "drive": 1.0, "u": 0.0, "q0": 0.0, "v0": 1.0},
            "tf": 1.0,
            "N_list": [10, 20, 40],
            "schemes": ["2nd-rk4"],
        })
        main(["study", "--config", str(cfg_path), "--out", str(tmp_path / "s")])
        lines = (tmp_path / "s" / "study.csv").read_text().splitlines()[1:]
        assert all(line.startswith("2nd-rk4,") for line in lines)

    def test_short_n_list_config_error(self, tmp_path):
        cfg_path = write_config(tmp_path, {
            "study": {"rate": 1.0},
            "tf": 1.0,
            "N_list": [10, 20],
            "schemes": ["2nd-rk4"],
        })
        assert main(["study", "--config", str(cfg_path),
                     "--out", str(tmp_path / "s")]) == 2


class TestReproducibility:
    @staticmethod
    def strip_times(csv_text):
        out = []
        for line in csv_text.splitlines():
            fields = line.split(",")
            if len(fields) == 9 and fields[5] != "solve_time_s":
                fields[5] = ""
            out.append(",".join(fields))
        return "\n".join(out)

    def test_consecutive_runs_identical_modulo_time(self, tmp_path):
        cfg_path = write_config(tmp_path, mini_block_config())
        for tag in ("a", "b"):
            code = subprocess.run(
                [sys.executable, "-m", "shootopt", "compare", "--config",
                 str(cfg_path), "--out", str(tmp_path / tag)],
                capture_output=True, text=True,
            ).returncode
            assert code == 0
        a = self.strip_times((tmp_path / "a" / "compare.csv").read_text())
        b = self.strip_times((tmp_path / "b" / "compare.csv").read_text())
        assert a == b

    def test_bad_config_exit_code_subprocess(self, tmp_path):
        cfg_path = write_config(tmp_path, mini_block_config(schemes=["nope"]))
        proc = subprocess.run(
            [sys.executable, "-m", "shootopt", "compare", "--config",
             str(cfg_path), "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
        assert "nope" in proc.stderr
