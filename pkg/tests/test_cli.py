import csv
import json

import numpy as np
import pytest
import yaml

from fracsde.cli import main, read_series
from fracsde.errors import DataError


def _write_config(path, cfg):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return str(path)


def _write_series(path, values, times=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "value"])
        for i, v in enumerate(values):
            writer.writerow([times[i] if times else i, v])
    return str(path)


class TestSeriesIngestion:
    def test_reads_numeric_series(self, tmp_path):
        p = _write_series(tmp_path / "s.csv", [1.0, 2.0, 3.0])
        _, values = read_series(p)
        np.testing.assert_allclose(values, [1.0, 2.0, 3.0])

    def test_reads_iso_dates(self, tmp_path):
        p = _write_series(
            tmp_path / "s.csv", [1.0, 2.0], times=["2020-01-02", "2020-01-03"]
        )
        _, values = read_series(p)
        assert len(values) == 2

    def test_rejects_gap(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("time,value\n0,1.0\n1,\n2,3.0\n")
        with pytest.raises(DataError):
            read_series(str(p))

    def test_rejects_non_monotone_time(self, tmp_path):
        p = _write_series(tmp_path / "s.csv", [1.0, 2.0, 3.0], times=[0, 2, 1])
        with pytest.raises(DataError):
            read_series(p)

    def test_rejects_irregular_spacing(self, tmp_path):
        p = _write_series(tmp_path / "s.csv", [1.0, 2.0, 3.0], times=[0, 1, 3])
        with pytest.raises(DataError):
            read_series(p)


class TestSimulate:
    def test_fou_row_count_and_sidecar(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {
                "model": "fou",
                "seed": 5,
                "output_dir": str(tmp_path / "out"),
                "simulate": {"gamma": 1.0, "mu": 0.0, "sigma": 1.0, "hurst": 0.75,
                             "dt": 1.0, "n_obs": 300},
            },
        )
        assert main(["simulate", "-c", cfg]) == 0
        rows = (tmp_path / "out" / "fou_path.csv").read_text().strip().splitlines()
        assert len(rows) == 302  # header + 301 points
        sidecar = json.loads((tmp_path / "out" / "fou_path.json").read_text())
        assert sidecar["seed"] == 5
        assert sidecar["params"]["hurst"] == 0.75
        assert "config_sha256" in sidecar

    def test_same_seed_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            cfg = _write_config(
                tmp_path / f"{sub}.yaml",
                {
                    "model": "fou",
                    "seed": 9,
                    "output_dir": str(tmp_path / sub),
                    "simulate": {"hurst": 0.7, "n_obs": 50, "dt": 1.0},
                },
            )
            assert main(["simulate", "-c", cfg]) == 0
        a = (tmp_path / "a" / "fou_path.csv").read_bytes()
        b = (tmp_path / "b" / "fou_path.csv").read_bytes()
        assert a == b

    def test_fcir_invalid_mu_rejected_as_config_error(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"model": "fcir", "output_dir": str(tmp_path),
             "simulate": {"mu": -0.05, "n_obs": 10, "dt": 0.004}},
        )
        assert main(["simulate", "-c", cfg]) == 1

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"model": "fou", "seed": 1, "output_dir": str(tmp_path / "o"),
             "simulate": {"n_obs": 20, "dt": 1.0, "hurst": 0.6}},
        )
        assert main(["simulate", "-c", cfg, "--seed", "77"]) == 0
        sidecar = json.loads((tmp_path / "o" / "fou_path.json").read_text())
        assert sidecar["seed"] == 77


class TestInfer:
    @pytest.fixture(scope="class")
    def fou_series(self, tmp_path_factory):
        from fracsde.models import FouParams, fou_exact_simulate

        d = tmp_path_factory.mktemp("data")
        x = fou_exact_simulate(FouParams(1.0, 0.0, 1.0, 0.75), 61, 1.0, 3)
        return _write_series(d / "fou.csv", x)

    def test_grid_density_normalizes(self, fou_series, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {
                "model": "fou",
                "output_dir": str(tmp_path / "out"),
                "infer": {
                    "input": fou_series,
                    "dt": 1.0,
                    "sampler": "grid",
                    "grid": {
                        "gamma": {"min": 0.1, "max": 5.0, "n": 16, "log": True},
                        "hurst": {"min": 0.2, "max": 0.98, "n": 24},
                    },
                },
            },
        )
        assert main(["infer", "-c", cfg]) == 0
        with open(tmp_path / "out" / "grid_density.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 16 * 24
        gammas = sorted({float(r["gamma"]) for r in rows})
        hursts = sorted({float(r["hurst"]) for r in rows})
        dens = np.array([float(r["density"]) for r in rows]).reshape(16, 24)
        total = np.trapezoid(np.trapezoid(dens, hursts, axis=1), gammas)
        assert total == pytest.approx(1.0, abs=1e-6)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert "hurst" in summary["params"]

    def test_hmc_reproducible_summaries(self, fou_series, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            cfg = _write_config(
                tmp_path / f"{sub}.yaml",
                {
                    "model": "fou",
                    "seed": 11,
                    "output_dir": str(tmp_path / sub),
                    "infer": {
                        "input": fou_series,
                        "dt": 1.0,
                        "sampler": "hmc",
                        "level": 1,
                        "iterations": 150,
                        "warmup": 100,
                    },
                },
            )
            assert main(["infer", "-c", cfg]) == 0
            outs.append(json.loads((tmp_path / sub / "summary.json").read_text()))
        assert outs[0]["params"] == outs[1]["params"]

    def test_missing_input_is_config_error(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"model": "fou", "output_dir": str(tmp_path),
             "infer": {"dt": 1.0, "sampler": "grid"}},
        )
        assert main(["infer", "-c", cfg]) == 1

    def test_set_override(self, fou_series, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {
                "model": "fou",
                "seed": 2,
                "output_dir": str(tmp_path / "o"),
                "infer": {
                    "input": fou_series,
                    "dt": 1.0,
                    "sampler": "gibbs",
                    "iterations": 40,
                    "warmup": 30,
                },
            },
        )
        assert main(["infer", "-c", cfg, "--set", "infer.iterations=25"]) == 0
        with open(tmp_path / "o" / "draws.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 26  # header + 25 draws


class TestRolling:
    def test_stride_from_n_windows(self, tmp_path):
        # the documented workflow geometry: 15508 points, windows of 1260,
        # 1000 windows -> stride 14 (scaled down here: same arithmetic)
        n, window, n_windows = 15508, 1260, 1000
        stride = max(1, round((n - window) / (n_windows - 1)))
        assert stride == 14

    def test_white_noise_null(self, tmp_path):
        rng = np.random.default_rng(5)
        series = np.exp(rng.normal(0.0, 0.02, 700) + 1.0)
        p = _write_series(tmp_path / "s.csv", series)
        cfg = _write_config(
            tmp_path / "c.yaml",
            {
                "model": "fou",
                "seed": 1,
                "output_dir": str(tmp_path / "out"),
                "rolling": {"input": p, "dt": 1.0, "window": 300, "stride": 200},
            },
        )
        assert main(["rolling", "-c", cfg]) == 0
        with open(tmp_path / "out" / "rolling.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3  # starts 0, 200, 400
        for row in rows:
            assert 0.3 < float(row["hurst_mean"]) < 0.7

    def test_window_longer_than_series_rejected(self, tmp_path):
        p = _write_series(tmp_path / "s.csv", np.ones(50) + 0.1)
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"model": "fou", "output_dir": str(tmp_path),
             "rolling": {"input": p, "dt": 1.0, "window": 100}},
        )
        assert main(["rolling", "-c", cfg]) == 1

    def test_fcir_window_with_nonpositive_skipped(self, tmp_path):
        rng = np.random.default_rng(6)
        series = np.abs(rng.normal(0.05, 0.005, 420)) + 1e-4
        series[5] = -0.01  # poisons the first window only (starts 0, 10, 20)
        p = _write_series(tmp_path / "s.csv", series)
        cfg = _write_config(
            tmp_path / "c.yaml",
            {
                "model": "fcir",
                "seed": 2,
                "output_dir": str(tmp_path / "out"),
                "rolling": {"input": p, "dt": 0.003968253968253968,
                            "window": 400, "stride": 10, "draws": 200},
            },
        )
        assert main(["rolling", "-c", cfg]) == 0
        with open(tmp_path / "out" / "rolling.csv") as fh:
            rows = list(csv.DictReader(fh))
        sidecar = json.loads((tmp_path / "out" / "rolling.json").read_text())
        assert sidecar["skipped"] == 1
        assert len(rows) == 2


class TestDemoFailure:
    def test_single_step_identity(self, tmp_path):
        # N = 1: the Euler product is exactly 1 + dB_0
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"seed": 3, "output_dir": str(tmp_path / "out"),
             "demo_failure": {"hurst": [0.5], "n_steps": [1], "n_seeds": 5}},
        )
        assert main(["demo-failure", "-c", cfg]) == 0
        with open(tmp_path / "out" / "euler_failure.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        from fracsde.toeplitz import as_generator, fgn_simulate

        for row in rows:
            noise = fgn_simulate(0.5, 1.0, 1, as_generator(int(row["seed"])))
            assert float(row["euler_terminal"]) == pytest.approx(1.0 + noise[0], rel=1e-6)

    def test_collapse_vs_agreement(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"seed": 0, "output_dir": str(tmp_path / "out"),
             "demo_failure": {"hurst": [0.3, 0.7], "n_steps": [4096], "n_seeds": 20}},
        )
        assert main(["demo-failure", "-c", cfg]) == 0
        with open(tmp_path / "out" / "euler_failure.csv") as fh:
            rows = list(csv.DictReader(fh))
        low = [r for r in rows if float(r["hurst"]) == 0.3]
        high = [r for r in rows if float(r["hurst"]) == 0.7]
        assert np.median([float(r["euler_terminal"]) for r in low]) < 1e-3
        ratios = [float(r["euler_terminal"]) / float(r["exact_terminal"]) for r in high]
        assert np.mean([0.5 < r < 2.0 for r in ratios]) >= 0.9


class TestDiagnosticsCommand:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        draws = tmp_path / "draws.csv"
        with open(draws, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["a", "b"])
            for _ in range(500):
                writer.writerow(rng.normal(size=2))
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"output_dir": str(tmp_path / "out"),
             "diagnostics": {"input": str(draws), "max_lag": 50}},
        )
        assert main(["diagnostics", "-c", cfg]) == 0
        report = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
        assert report["ess"]["a"] > 300

    def test_missing_file_is_data_error(self, tmp_path):
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"output_dir": str(tmp_path), "diagnostics": {"input": "nope.csv"}},
        )
        assert main(["diagnostics", "-c", cfg]) == 3


class TestExitCodes:
    def test_unknown_flag_is_config_error(self):
        assert main(["simulate", "--nonsense"]) == 1

    def test_bad_series_is_data_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,value\n0,1.0\n0,2.0\n")
        cfg = _write_config(
            tmp_path / "c.yaml",
            {"model": "fou", "output_dir": str(tmp_path),
             "infer": {"input": str(p), "dt": 1.0, "sampler": "grid"}},
        )
        assert main(["infer", "-c", cfg]) == 3
