import json

import numpy as np
import pytest
import yaml

from fbsns.cli import ENV_OUTPUT_DIR, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main, run
from fbsns.config import DEFAULTS, load_config_file, parse_config
from fbsns.exceptions import ConfigError
from fbsns.io import load_field


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config("ns")
        assert cfg["grid.n"] == DEFAULTS["grid"]["n"]
        assert cfg["field.preset"] == "taylor-green"
        assert cfg.overrides == ()

    def test_subcommand_defaults(self):
        cfg = parse_config("burgers")
        assert cfg["grid.dim"] == 1 and cfg["field.preset"] == "cole-hopf-1d"

    def test_negative_viscosity_names_key(self):
        with pytest.raises(ConfigError, match="physics.nu"):
            parse_config("ns", flags={"physics.nu": -1.0})

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="grid.size"):
            parse_config("ns", {"grid": {"size": 3}})
        with pytest.raises(ConfigError, match="bogus"):
            parse_config("ns", flags={"bogus.key": 1})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="time.steps"):
            parse_config("ns", {"time": {"steps": 2.5}})
        with pytest.raises(ConfigError, match="grid"):
            parse_config("ns", {"grid": 3})
        with pytest.raises(ConfigError, match="field.preset"):
            parse_config("ns", flags={"field.preset": "cole-hopf-1d"})

    def test_flag_beats_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"grid": {"n": 32}, "physics": {"nu": 0.3}}))
        cfg = parse_config("ns", load_config_file(p), {"grid.n": 16})
        assert cfg["grid.n"] == 16 and cfg["physics.nu"] == 0.3
        assert cfg.overrides == ("grid.n",)

    def test_cross_checks(self):
        with pytest.raises(ConfigError, match="scheme.h"):
            parse_config("scheme", flags={"scheme.h": 0.3})
        with pytest.raises(ConfigError, match="lagrangian.t"):
            parse_config("lagrangian", flags={"lagrangian.t": 1.0})
        with pytest.raises(ConfigError, match="field.path"):
            parse_config("leray", flags={"field.preset": "file"})

    def test_round_trip_through_dump(self):
        cfg = parse_config("leray", flags={"truncation.N": 8.0})
        again = parse_config("leray", yaml.safe_load(cfg.dump()))
        assert again.data == cfg.data

    def test_bad_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "missing.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(bad)
        assert load_config_file(_touch(tmp_path / "empty.yaml")) == {}


def _touch(p):
    p.write_text("")
    return p


class TestCli:
    def test_ns_taylor_green(self, tmp_path, capsys):
        out = tmp_path / "ns"
        assert main(["ns", "--n", "16", "--steps", "10", "--output", str(out)]) == EXIT_OK
        m = manifest(out)
        assert m["status"] == "ok" and m["results"]["taylor_green_l2_error"] < 1e-10
        assert "diagnostics.csv" in m["files"] and "ok" in capsys.readouterr().out
        sol = load_field(out / sorted(f for f in m["files"] if f.endswith(".fbsd"))[0])
        assert sol.grid.n == 16

    def test_leray_monte_carlo(self, tmp_path):
        out = tmp_path / "leray"
        assert main(["leray", "--n", "16", "--N", "4", "--M", "200", "--K", "4", "--output", str(out)]) == EXIT_OK
        m = manifest(out)
        assert m["results"]["exact_vs_minus_convection"] < 1e-12
        header = (out / "nodes.csv").read_text().splitlines()[0]
        assert header.startswith("i0,i1,component,estimate,oracle,error,stderr,z")

    def test_bad_config_exit_code(self, tmp_path, capsys):
        assert main(["ns", "--nu", "-1", "--output", str(tmp_path)]) == EXIT_CONFIG
        assert "physics.nu" in capsys.readouterr().err
        assert main(["ns", "--set", "grid.bogus=1", "--output", str(tmp_path)]) == EXIT_CONFIG

    def test_solver_failure_exit_code(self, tmp_path, capsys):
        out = tmp_path / "b"
        code = main(["burgers", "--n", "64", "--amplitude", "5", "--nu", "0.05", "--T", "3", "--steps", "60", "--max-iter", "50", "--output", str(out)])
        assert code == EXIT_SOLVER
        m = manifest(out)
        assert m["status"] == "solver_failed" and len(m["error"]["residuals"]) >= 1
        assert "solver failed" in capsys.readouterr().err

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path))
        assert main(["burgers", "--n", "32", "--steps", "10"]) == EXIT_OK
        assert (tmp_path / "burgers" / "manifest.json").exists()

    def test_manifest_replay_is_bit_identical(self, tmp_path):
        a = tmp_path / "a"
        assert main(["leray", "--n", "16", "--N", "4", "--M", "64", "--K", "4", "--output", str(a)]) == EXIT_OK
        b = tmp_path / "b"
        assert main(["leray", "--config", str(a / "manifest.json"), "--n-jobs", "2", "--output", str(b)]) == EXIT_OK
        assert manifest(a)["files"] == manifest(b)["files"]
        # rerunning into the same directory replaces the outputs
        assert main(["leray", "--config", str(a / "manifest.json"), "--output", str(a)]) == EXIT_OK
        assert manifest(a)["files"] == manifest(b)["files"]

    def test_run_returns_manifest(self, tmp_path):
        cfg = parse_config("convergence", flags={"grid.n": 16, "time.steps": 10, "convergence.N_list": [4.0, 16.0], "output.dir": str(tmp_path)})
        code, m = run(cfg)
        assert code == EXIT_OK and len(m["results"]["errors"]) == 2

    def test_scheme_and_lagrangian(self, tmp_path):
        assert main(["scheme", "--n", "16", "--T", "0.2", "--h", "0.05", "--output", str(tmp_path / "s")]) == EXIT_OK
        # distances are absolute; the unit Taylor-Green field has L2 norm sqrt(2) pi
        assert manifest(tmp_path / "s")["results"]["distance_to_mild"] < 0.1 * np.sqrt(2) * np.pi
        assert main(["lagrangian", "--n", "16", "--M", "200", "--eval-n", "8", "--measure-points", "400", "--output", str(tmp_path / "l")]) == EXIT_OK
        r = manifest(tmp_path / "l")["results"]
        assert np.isfinite(r["relative_gap"]) and "measure_passed" in r

    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "fbsns" in capsys.readouterr().out


class TestCliChecks:
    """Sweeps and refinements that turn single runs into complete experiments."""

    def test_leray_both_estimators(self, tmp_path):
        out = tmp_path / "both"
        assert main(["leray", "--n", "32", "--N", "8", "--M", "2000", "--K", "8", "--estimator", "both", "--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        for prefix in ("single_", "triple_"):
            assert (out / f"{prefix}nodes.csv").exists()
            assert res[f"{prefix}fraction_within_3_stderr"] >= 0.95
        assert 0 <= res["agreement_within_3_stderr"] <= 1

    def test_leray_p_eps_sweep(self, tmp_path):
        out = tmp_path / "peps"
        assert main(["leray", "--n", "16", "--preset", "random-bandlimited", "--kmax", "3", "--seeds", "3", "--estimator", "exact", "--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        assert res["p_eps_checks"] == 6 and res["p_eps_violations"] == 0
        assert res["p_eps_min_slack"] > 1
        assert "p_eps_bound.csv" in manifest(out)["files"]

    def test_burgers_refine_ratios(self, tmp_path):
        out = tmp_path / "ref"
        assert main(["burgers", "--n", "64", "--steps", "50", "--refine", "--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        assert 1.8 <= res["oracle_error_ratio"] <= 2.2
        assert 1.8 <= res["energy_residual_ratio"] <= 2.2

    def test_burgers_max_principle_sweep(self, tmp_path):
        out = tmp_path / "mp"
        argv = ["burgers", "--dim", "2", "--n", "16", "--T", "0.5", "--steps", "20", "--nu", "0.3", "--preset", "random-bandlimited", "--amplitude", "0.5", "--kmax", "3", "--seeds", "2"]
        assert main(argv + ["--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        assert res["max_principle_solves"] == 4 and res["max_principle_violations"] == 0

    def test_scheme_refine_reports_constants(self, tmp_path):
        out = tmp_path / "sch"
        assert main(["scheme", "--n", "16", "--h", "0.1", "--refine", "--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        assert res["C_drift"] == pytest.approx(res["C_fine"] / res["C_coarse"] - 1)
        assert res["fine_distance_to_mild"] < res["distance_to_mild"]

    def test_lagrangian_refine_bias_ratio(self, tmp_path):
        out = tmp_path / "lag"
        assert main(["lagrangian", "--n", "16", "--steps", "10", "--M", "500", "--refine", "--output", str(out)]) == EXIT_OK
        res = manifest(out)["results"]
        assert all(res[f"S{S}_within_bound"] for S in (10, 20, 40))
        assert 1.6 <= res["bias_ratio"] <= 2.5

    def test_replay_reports_reproduction(self, tmp_path, capsys):
        first = tmp_path / "first"
        assert main(["leray", "--n", "16", "--N", "4", "--M", "500", "--K", "4", "--output", str(first)]) == EXIT_OK
        again = tmp_path / "again"
        assert main(["leray", "--config", str(first / "manifest.json"), "--n-jobs", "2", "--output", str(again)]) == EXIT_OK
        assert manifest(again)["reproduced"] is True
        assert "reproduced=True" in capsys.readouterr().out
        # a changed seed must be detected
        other = tmp_path / "other"
        assert main(["leray", "--config", str(first / "manifest.json"), "--seed", "5", "--output", str(other)]) == EXIT_OK
        assert manifest(other)["reproduced"] is False
        assert "reproduced" not in manifest(first)
