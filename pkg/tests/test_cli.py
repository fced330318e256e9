"""Tests for the command-line runner."""

import csv
import json
from pathlib import Path

import pytest

from varprec.cli import main, parse_config, sim_config_from_args


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestValidateErrorModel:
    def test_default_run(self, tmp_path):
        rc = main(["--out-dir", str(tmp_path), "validate-error-model",
                   "--samples", "200000"])
        assert rc == 0
        rows = read_csv(tmp_path / "validate_error_model.csv")
        assert rows[0] == ["arithmetic", "formula_variance", "empirical_variance",
                           "rel_dev", "samples", "seed"]
        assert [r[0] for r in rows[1:]] == ["add", "sub", "mul", "div", "sqrt"]
        assert all(float(r[3]) < 0.03 for r in rows[1:])

    def test_zero_samples_usage_error(self, tmp_path):
        rc = main(["--out-dir", str(tmp_path), "validate-error-model",
                   "--samples", "0"])
        assert rc == 2

    def test_reruns_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["--out-dir", str(d), "validate-error-model",
                         "--samples", "50000", "--seed", "3"]) == 0
        assert (a / "validate_error_model.csv").read_bytes() == \
            (b / "validate_error_model.csv").read_bytes()

    def test_manifest_written(self, tmp_path):
        main(["--out-dir", str(tmp_path), "validate-error-model",
              "--samples", "50000"])
        m = json.loads((tmp_path / "validate-error-model.manifest.json").read_text())
        assert m["params"]["samples"] == 50000
        assert "validate_error_model.csv" in m["outputs"]
        assert len(m["outputs"]["validate_error_model.csv"]) == 64


class TestTables:
    def test_spec_table(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "tables", "spec"]) == 0
        rows = read_csv(tmp_path / "table_spec.csv")
        data = {r[0]: r for r in rows[1:]}
        assert data["N3"][1:4] == ["24", "7", "16"]
        assert float(data["N3"][4]) == pytest.approx(154.13, abs=0.01)
        assert all(float(r[7]) < 0.05 for r in rows[1:])

    def test_ops_per_bit_table(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "tables", "ops_per_bit"]) == 0
        rows = read_csv(tmp_path / "table_ops_per_bit.csv")
        assert all(int(r[4]) <= 1 for r in rows[1:])

    def test_w_moments_table(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "tables", "w_moments",
                     "--samples", "50000"]) == 0
        rows = read_csv(tmp_path / "table_w_moments.csv")
        assert [int(r[0]) for r in rows[1:]] == [1, 3, 5, 7, 9, 11, 13]


class TestConfig:
    def test_parse_config(self, tmp_path):
        cfgf = tmp_path / "sim.cfg"
        cfgf.write_text("# desk run\nnt = 2\nk = 2\nsnr_db = 12.5\n"
                        "trials = 3\nsweep = 6,12\nschemes = fixed,online\n")
        raw = parse_config(cfgf)
        assert raw["nt"] == "2" and raw["sweep"] == "6,12"

    def test_bad_key_rejected(self, tmp_path):
        cfgf = tmp_path / "sim.cfg"
        cfgf.write_text("bogus = 1\n")

        class A:
            config = str(cfgf)
            nt = k = snr_db = trials = seed = sweep = scheme = None
        with pytest.raises(ValueError):
            sim_config_from_args(A)

    def test_cli_overrides_config(self, tmp_path):
        cfgf = tmp_path / "sim.cfg"
        cfgf.write_text("nt = 4\nk = 4\ntrials = 9\n")

        class A:
            config = str(cfgf)
            nt = 2
            k = 2
            snr_db = None
            trials = None
            seed = 11
            sweep = "8"
            scheme = "fixed"
        cfg = sim_config_from_args(A)
        assert cfg.n_t == 2 and cfg.k_users == 2
        assert cfg.trials == 9
        assert cfg.seed == 11
        assert cfg.sweep == (8.0,) and cfg.schemes == ("fixed",)


class TestPareto:
    def test_smoke_run(self, tmp_path):
        rc = main(["--out-dir", str(tmp_path), "pareto", "--nt", "2", "--k", "2",
                   "--trials", "1", "--seed", "3", "--sweep", "8",
                   "--scheme", "fixed,online"])
        assert rc == 0
        rows = read_csv(tmp_path / "pareto.csv")
        assert rows[0][0] == "scheme"
        assert {r[0] for r in rows[1:]} == {"fixed", "online"}
        m = json.loads((tmp_path / "pareto.manifest.json").read_text())
        assert m["params"]["n_t"] == 2

    def test_rerun_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["pareto", "--nt", "2", "--k", "2", "--trials", "2", "--seed", "5",
                "--sweep", "6", "--scheme", "fixed,offline"]
        for d in (a, b):
            assert main(["--out-dir", str(d)] + args) == 0
        assert (a / "pareto.csv").read_bytes() == (b / "pareto.csv").read_bytes()


class TestHistogram:
    def test_small_histogram(self, tmp_path):
        rc = main(["--out-dir", str(tmp_path), "histogram", "--nt", "2", "--k", "2",
                   "--seed", "1"])
        assert rc == 0
        rows = read_csv(tmp_path / "histogram.csv")
        assert rows[0] == ["x_bits", "op_kind", "count"]
        assert sum(int(r[2]) for r in rows[1:]) > 0

    def test_dims_required(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "histogram"]) == 2
        assert main(["--out-dir", str(tmp_path), "histogram", "--nt", "2",
                     "--k", "3"]) == 2

    def test_rerun_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["--out-dir", str(d), "histogram", "--nt", "2",
                         "--k", "2", "--seed", "2"]) == 0
        assert (a / "histogram.csv").read_bytes() == (b / "histogram.csv").read_bytes()
