"""Subcommand behavior: config validation, artifacts, determinism."""

import json

import numpy as np
import pytest

from fimstats.cli import main, parse_config
from fimstats.data import write_idx_images, write_idx_labels
from fimstats.errors import ConfigError


def write_cfg(tmp_path, name, payload):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(payload))
    return str(path)


THEORY_CFG = {"L": 3, "M": 1000, "C": 1, "sigma_w2": 1.0, "sigma_b2": 0.1,
              "activation": "linear", "T": 100}


class TestConfigSchema:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config("theory", {**THEORY_CFG, "bogus": 1})

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match="missing required"):
            parse_config("theory", {"L": 3})

    def test_defaults_fill_in(self):
        cfg = parse_config("theory", THEORY_CFG)
        assert cfg["mu"] == 0.0
        assert cfg["qhat0"] == 1.0

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config("theory", {**THEORY_CFG, "M": "many"})


class TestTheoryCommand:
    def test_linear_benchmark_values(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "t", THEORY_CFG)
        assert main(["theory", "--config", cfg, "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "theory.json").read_text())
        assert payload["kappa1"] == pytest.approx(1.65, abs=1e-12)
        assert payload["kappa2"] == pytest.approx(0.15, abs=1e-12)
        assert payload["max_eig"] == pytest.approx(330.0, rel=1e-12)
        assert "kappa1" in capsys.readouterr().out

    def test_erf_fig1_setting_is_finite(self, tmp_path):
        cfg = write_cfg(tmp_path, "t", {**THEORY_CFG, "activation": "erf",
                                        "sigma_w2": 3.0, "sigma_b2": 0.64})
        assert main(["theory", "--config", cfg, "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "theory.json").read_text())
        assert np.isfinite(payload["kappa1"]) and payload["kappa1"] > 0

    def test_set_override(self, tmp_path):
        cfg = write_cfg(tmp_path, "t", THEORY_CFG)
        assert main(["theory", "--config", cfg, "--set", "M=500",
                     "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "theory.json").read_text())
        assert payload["mean_eig"] == pytest.approx(1.65 / 500, rel=1e-12)

    def test_missing_key_is_usage_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "t", {"L": 3})
        assert main(["theory", "--config", cfg]) == 2
        assert "missing required" in capsys.readouterr().err

    def test_unknown_key_is_usage_error(self, tmp_path):
        cfg = write_cfg(tmp_path, "t", {**THEORY_CFG, "nope": 2})
        assert main(["theory", "--config", cfg]) == 2

    def test_bad_set_syntax(self, tmp_path):
        cfg = write_cfg(tmp_path, "t", THEORY_CFG)
        assert main(["theory", "--config", cfg, "--set", "M"]) == 2


class TestSpectrumCommand:
    def test_small_ensemble_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, "s", {
            "L": 3, "C": 1, "sigma_w2": 1.0, "sigma_b2": 0.1, "activation": "linear",
            "M_list": [32], "T": 16, "seeds": 3})
        out = tmp_path / "res"
        assert main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
        csv_text = (out / "ensemble.csv").read_text()
        assert csv_text.count("\n") == 4  # header + 3 seeds
        summary = json.loads((out / "summary.json").read_text())
        assert "M=32,T=16" in summary

    def test_deterministic_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, "s", {
            "L": 2, "C": 2, "sigma_w2": 1.5, "sigma_b2": 0.2, "activation": "relu",
            "M_list": [16], "T": 8, "seeds": 2})
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
            outs.append((out / "ensemble.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_t_scan_mode(self, tmp_path):
        cfg = write_cfg(tmp_path, "s", {
            "L": 2, "C": 1, "sigma_w2": 1.0, "sigma_b2": 0.1, "activation": "linear",
            "M_list": [16], "T_list": [4, 8], "seeds": 2})
        out = tmp_path / "res"
        assert main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert {"M=16,T=4", "M=16,T=8"} <= set(summary)

    def test_spectra_dump(self, tmp_path):
        cfg = write_cfg(tmp_path, "s", {
            "L": 2, "C": 1, "sigma_w2": 1.0, "sigma_b2": 0.1,
            "M_list": [8], "T": 4, "seeds": 2, "dump_spectra": True})
        out = tmp_path / "res"
        assert main(["spectrum", "--config", cfg, "--out", str(out)]) == 0
        assert len(list(out.glob("spectrum_M8_T4_seed*.csv"))) == 2


SWEEP_CFG = {"L": 2, "C": 1, "sigma_w2": 2.0, "sigma_b2": 0.1, "activation": "relu",
             "M_list": [12], "T": 6, "mu": 0.9, "steps": 5, "trials": 1,
             "eta_min": 1e-3, "eta_max": 1.0, "eta_points": 3}


class TestSweepCommand:
    def test_dry_run_prints_grid(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "w", SWEEP_CFG)
        assert main(["sweep", "--config", cfg, "--dry-run"]) == 0
        grid = json.loads(capsys.readouterr().out)
        assert grid["M"] == [12]
        assert len(grid["eta"]) == 3

    def test_artificial_data_sweep_artifacts(self, tmp_path):
        cfg = write_cfg(tmp_path, "w", SWEEP_CFG)
        out = tmp_path / "res"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        for name in ("sweep.csv", "boundary.json", "plot_data.json"):
            assert (out / name).exists()
        boundary = json.loads((out / "boundary.json").read_text())
        assert "12" in boundary and boundary["12"]["eta_c_theory"] > 0

    def test_idx_sweep_requires_paths(self, tmp_path):
        cfg = write_cfg(tmp_path, "w", {**SWEEP_CFG, "data": "idx"})
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "r")]) == 2

    def test_idx_sweep_smoke(self, tmp_path):
        rng = np.random.default_rng(0)
        ip = tmp_path / "im.idx"
        lp = tmp_path / "lb.idx"
        write_idx_images(ip, rng.integers(0, 255, (24, 4, 4), dtype=np.uint8))
        write_idx_labels(lp, rng.integers(0, 3, 24, dtype=np.uint8))
        cfg = write_cfg(tmp_path, "w", {
            **SWEEP_CFG, "C": 3, "data": "idx", "idx_images": str(ip),
            "idx_labels": str(lp), "minibatch": 12, "epochs": 1,
            "input_width": 16, "eta_points": 2})
        out = tmp_path / "res"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "sweep.csv").exists()


class TestVerifyCommand:
    def test_all_suites_pass(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "ALL PASS" in out
        assert "FAIL" not in out.replace("PASS/FAIL", "")
