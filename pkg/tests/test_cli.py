"""Tests for config validation, the experiment runner, and the CLI."""

import json
from pathlib import Path

import numpy as np
import pytest

from fpmimo.cli import main
from fpmimo.experiments import ConfigError, load_config, run_experiment, validate_config


def _convergence_cfg(**overrides):
    cfg = {
        "kind": "convergence",
        "seed": 7,
        "channel": {"M": 32, "K": 4, "N_UE": 2, "zeta_r": 0.5, "zeta_t": 0.5},
        "run": {"trials": 40, "iters": 8, "snr_db": 20.0, "chunk": 16},
        "detectors": [
            {"algorithm": "cg", "label": "cg"},
            {"algorithm": "fp_cg", "matvec": "fp16", "inner": "fp16",
             "label": "fp16"},
        ],
    }
    cfg.update(overrides)
    return cfg


class TestValidate:
    def test_valid_config_has_no_diagnostics(self):
        assert validate_config(_convergence_cfg()) == []

    def test_unknown_kind(self):
        diags = validate_config({"kind": "latency"})
        assert any(d.startswith("kind:") for d in diags)

    def test_block_size_must_divide_dimension(self):
        cfg = _convergence_cfg()
        cfg["detectors"].append(
            {"algorithm": "fp_bj_cg", "L": 7, "matvec": "fp16", "inner": "fp16"})
        diags = validate_config(cfg)
        assert any("detectors[2].L" in d and "divide" in d for d in diags)

    def test_unknown_format_names_registry(self):
        cfg = _convergence_cfg()
        cfg["detectors"][1]["matvec"] = "fp8"
        diags = validate_config(cfg)
        assert any("fp8" in d and "registry" in d for d in diags)

    def test_shipped_experiment_configs_are_valid(self):
        exp_dir = Path(__file__).resolve().parent.parent / "experiments"
        tomls = sorted(exp_dir.glob("*.toml"))
        assert tomls, "no shipped experiment configs found"
        for path in tomls:
            assert validate_config(load_config(path)) == [], path.name


class TestRunExperiment:
    def test_invalid_config_raises(self, tmp_path):
        with pytest.raises(ConfigError):
            run_experiment({"kind": "latency"}, tmp_path)

    def test_convergence_artifacts(self, tmp_path):
        manifest = run_experiment(_convergence_cfg(), tmp_path)
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "convergence_cg.csv").exists()
        assert (tmp_path / "trace_fp16.csv").exists()
        roundtrip = json.loads((tmp_path / "manifest.json").read_text())
        assert roundtrip["seed"] == 7
        assert set(roundtrip["outputs"]) <= {p.name for p in tmp_path.iterdir()}

    def test_deterministic_output_bytes_across_threads(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_experiment(_convergence_cfg(), a, threads=1)
        run_experiment(_convergence_cfg(), b, threads=3)
        for name in ("summary.csv", "convergence_cg.csv", "convergence_fp16.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_override_changes_results(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_experiment(_convergence_cfg(), a)
        run_experiment(_convergence_cfg(), b, seed=99)
        assert (a / "summary.csv").read_bytes() != (b / "summary.csv").read_bytes()

    def test_ber_artifact_columns(self, tmp_path):
        cfg = {
            "kind": "ber",
            "seed": 3,
            "channel": {"M": 32, "K": 4, "N_UE": 2, "zeta_r": 0.5,
                        "zeta_t": 0.5},
            "run": {"trials": 60, "snr_db": [10.0, 20.0], "chunk": 30},
            "detectors": [
                {"algorithm": "lmmse"},
                {"algorithm": "fp_bj_cg", "iters": 6, "L": 4,
                 "matvec": "fp16", "inner": "fp16"},
            ],
        }
        run_experiment(cfg, tmp_path)
        header = (tmp_path / "ber.csv").read_text().splitlines()[0]
        assert header == ("detector,precision_w,precision_mv,precision_ip,L,"
                          "zeta,snr_db,iters,trials,bit_errors,ber,ci_low,"
                          "ci_high,divergence_rate")
        assert (tmp_path / "ber_plotdata_lmmse.csv").exists()

    def test_cost_experiment(self, tmp_path):
        cfg = load_config(
            Path(__file__).resolve().parent.parent / "experiments" /
            "cost_converged.toml")
        run_experiment(cfg, tmp_path)
        body = (tmp_path / "cost.csv").read_text()
        assert "43.3" in body and "53.3" in body

    def test_gram_stats_experiment(self, tmp_path):
        cfg = {
            "kind": "gram_stats",
            "seed": 5,
            "gram_stats": {"Ms": [16, 64], "zetas": [0.0], "trials": 200,
                           "var_trials": 400, "pair": [0, 1]},
        }
        run_experiment(cfg, tmp_path)
        lines = (tmp_path / "gram_stats.csv").read_text().splitlines()
        assert lines[0] == ("M,zeta,trials,frob_dev_mean,var_sample,"
                            "var_closed_form,rel_err")
        assert len(lines) == 3


class TestCli:
    def test_formats_listing(self, capsys):
        assert main(["formats"]) == 0
        out = capsys.readouterr().out
        for name in ("bfloat16", "fp16", "fp32", "fp64"):
            assert name in out

    def test_validate_rejects_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('kind = "convergence"\n')
        assert main(["validate", str(bad)]) == 1
        assert "channel" in capsys.readouterr().err

    def test_validate_accepts_shipped_config(self, capsys):
        cfg = Path(__file__).resolve().parent.parent / "experiments" / "heuristic.toml"
        assert main(["validate", str(cfg)]) == 0

    def test_run_end_to_end(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(
            'kind = "cost"\nseed = 1\n[cost]\nN = 32\n'
            '[[cost.entries]]\nalgorithm = "cg"\niters = 15\n'
            '[[cost.entries]]\nalgorithm = "fp_cg"\nmatvec = "fp32"\n'
            'inner = "fp32"\niters = 17\n')
        assert main(["run", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "cost.csv").exists()

    def test_run_missing_file_errors(self, capsys):
        assert main(["run", "/nonexistent/exp.toml"]) == 2
