import json

import numpy as np
import pytest
from click.testing import CliRunner

from epigrowth.cli import main
from epigrowth.forecast_eval import read_metrics_csv

SCENARIO = {
    "num_counties": 6,
    "num_days": 36,
    "base_rate": 0.05,
    "regimes": [{"day": 18, "rate": 0.15}],
    "sigma": 0.02,
    "initial_level": 500,
    "num_distractors": 2,
    "lag": 8,
    "seed": 3,
}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    scn = root / "scenario.json"
    scn.write_text(json.dumps(SCENARIO))
    runner = CliRunner()
    result = runner.invoke(main, ["synth", "--scenario", str(scn), "--out", str(root)])
    assert result.exit_code == 0, result.output
    return root


BACKTEST_FLAGS = [
    "--lag", "8", "--trees", "30", "--stride", "2", "--eval-start", "10",
    "--ma", "3,4", "--seed", "5",
]


def run_backtest(dataset, out, extra=()):
    runner = CliRunner()
    args = [
        "backtest",
        "--cases", str(dataset / "cases.csv"),
        "--features", str(dataset / "features.csv"),
        "--out", str(out),
        *BACKTEST_FLAGS,
        *extra,
    ]
    return runner.invoke(main, args)


class TestSynthCommand:
    def test_outputs_exist(self, dataset):
        for name in ("cases.csv", "features.csv", "true_rates.csv", "scenario.json"):
            assert (dataset / name).exists()

    def test_cases_parse_back(self, dataset):
        from epigrowth.ingest import load_cases

        loaded = load_cases(dataset / "cases.csv")
        assert len(loaded.series) == SCENARIO["num_counties"]

    def test_true_rates_reflect_switch(self, dataset):
        rows = (dataset / "true_rates.csv").read_text().splitlines()[1:]
        by_day = {}
        for row in rows:
            day, fips, rate = row.split(",")
            by_day.setdefault(int(day), set()).add(float(rate))
        assert by_day[0] == {0.05}
        assert by_day[SCENARIO["num_days"] - 1] == {0.15}


class TestBacktestCommand:
    def test_runs_and_emits(self, dataset, tmp_path):
        out = tmp_path / "bt"
        result = run_backtest(dataset, out)
        assert result.exit_code == 0, result.output
        assert (out / "metrics.csv").exists()
        assert (out / "metrics_ma3.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "summary_ma4.csv").exists()
        assert (out / "mape_ma4.svg").exists()
        assert (out / "config_resolved.json").exists()
        assert (out / "diagnostics.json").exists()
        series = read_metrics_csv(out / "metrics.csv")
        assert set(series.methods()) == {"GRF", "OLS.wsize=2", "OLS.wsize=4",
                                         "OLS.wsize=8", "OLS.wsize=16"}

    def test_reruns_are_byte_identical(self, dataset, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_backtest(dataset, out1).exit_code == 0
        assert run_backtest(dataset, out2).exit_code == 0
        files1 = sorted(p.name for p in out1.iterdir())
        assert files1 == sorted(p.name for p in out2.iterdir())
        for name in files1:
            if name == "config_resolved.json":
                continue  # records the differing --out path by design
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_worker_count_does_not_change_outputs(self, dataset, tmp_path):
        out1, out8 = tmp_path / "w1", tmp_path / "w8"
        assert run_backtest(dataset, out1, ["--workers", "1"]).exit_code == 0
        assert run_backtest(dataset, out8, ["--workers", "8"]).exit_code == 0
        for name in sorted(p.name for p in out1.iterdir()):
            if name == "config_resolved.json":
                continue
            assert (out1 / name).read_bytes() == (out8 / name).read_bytes(), name

    def test_config_file_with_flag_override(self, dataset, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "cases": str(dataset / "cases.csv"),
                    "features": str(dataset / "features.csv"),
                    "lag": 8,
                    "stride": 2,
                    "eval_start": 10,
                    "seed": 5,
                    "forest": {"num_trees": 30},
                }
            )
        )
        out = tmp_path / "bt"
        runner = CliRunner()
        result = runner.invoke(
            main, ["backtest", "--config", str(cfg), "--out", str(out), "--ma", "3"]
        )
        assert result.exit_code == 0, result.output
        resolved = json.loads((out / "config_resolved.json").read_text())
        assert resolved["forest"]["num_trees"] == 30
        assert resolved["ma_windows"] == [3]
        assert resolved["lag"] == 8

    def test_no_scorable_days_fails_with_diagnostic(self, dataset, tmp_path):
        result = run_backtest(
            dataset, tmp_path / "bt", ["--eval-start", "35", "--eval-end", "35"]
        )
        assert result.exit_code == 1
        assert "no scorable days" in result.output

    def test_metric_scale_raw(self, dataset, tmp_path):
        out = tmp_path / "raw"
        result = run_backtest(dataset, out, ["--metric-scale", "raw"])
        assert result.exit_code == 0, result.output
        series = read_metrics_csv(out / "metrics.csv")
        assert all(r.rmse > 1.0 for r in series.records)  # count-scale errors

    def test_method_skips_recorded(self, tmp_path):
        # one healthy county plus one whose incident dies out mid-series
        import csv
        import datetime as dt

        root = tmp_path / "data"
        root.mkdir()
        origin = dt.date(2020, 3, 1)
        with open(root / "cases.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "county", "state", "fips", "cases", "deaths"])
            for t in range(36):
                w.writerow([(origin + dt.timedelta(days=t)).isoformat(), "a", "SY",
                            "00001", int(100 * np.exp(0.08 * t)), 0])
                w.writerow([(origin + dt.timedelta(days=t)).isoformat(), "b", "SY",
                            "00002", 40, 0])
        out = tmp_path / "bt"
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "backtest", "--cases", str(root / "cases.csv"), "--lag", "8",
                "--trees", "20", "--eval-start", "12", "--stride", "3",
                "--ma", "3", "--seed", "1", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        skips = json.loads((out / "diagnostics.json").read_text())["diagnostics"]["method_skips"]
        assert skips.get("GRF", 0) > 0
        assert skips.get("OLS.wsize=2", 0) > 0


class TestFourSourceRoute:
    def test_backtest_with_raw_sources_and_manifest(self, tmp_path):
        import csv
        import datetime as dt

        root = tmp_path / "data"
        root.mkdir()
        origin = dt.date(2020, 3, 1)
        n_days = 30
        with open(root / "cases.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "county", "state", "fips", "cases", "deaths"])
            for t in range(n_days):
                for fips, state, base in (("01001", "AL", 120), ("01003", "AL", 80),
                                           ("53033", "WA", 200)):
                    w.writerow(
                        [(origin + dt.timedelta(days=t)).isoformat(), "x", state,
                         fips, int(base * np.exp(0.08 * t)), 0]
                    )
        (root / "gaz.txt").write_text(
            "GEOID\tINTPTLAT\tINTPTLONG\n01001\t32.5\t-86.6\n01003\t30.7\t-87.7\n"
            "53033\t47.5\t-122.3\n"
        )
        (root / "svi.csv").write_text(
            "FIPS,EP_POV,EP_UNEMP\n01001,12.5,-999\n01003,10.0,4.0\n53033,8.0,3.0\n"
        )
        (root / "cusp.csv").write_text(
            "state,mask_start,mask_end\nAL,2020-03-10,\nWA,2020-03-05,2020-03-20\n"
        )
        with open(root / "tracking.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "state", "pcr_tests", "pcr_positive"])
            for t in range(n_days):
                date = (origin + dt.timedelta(days=t)).isoformat()
                w.writerow([date, "AL", 100 + t, 5 + t])
                w.writerow([date, "WA", 200 + t, 8 + t])
        (root / "manifest.json").write_text(
            json.dumps({"svi": {"EP_POV": "poverty"}, "svi_sentinel": -999})
        )
        out = tmp_path / "bt"
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "backtest",
                "--cases", str(root / "cases.csv"),
                "--gazetteer", str(root / "gaz.txt"),
                "--svi", str(root / "svi.csv"),
                "--cusp", str(root / "cusp.csv"),
                "--tracking", str(root / "tracking.csv"),
                "--manifest", str(root / "manifest.json"),
                "--lag", "8", "--trees", "20", "--eval-start", "10",
                "--stride", "3", "--ma", "3", "--seed", "2", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        diagnostics = json.loads((out / "diagnostics.json").read_text())
        # poverty, lat/lon, cusp mask, 2 tracking + derived positivity, svi unemp
        assert diagnostics["diagnostics"]["num_features"] >= 7
        series = read_metrics_csv(out / "metrics.csv")
        assert "GRF" in series.methods()

    def test_single_county_noiseless_constant_rate(self, tmp_path):
        scn = tmp_path / "scn.json"
        scn.write_text(
            json.dumps(
                {
                    "num_counties": 1, "num_days": 50, "base_rate": 0.06,
                    "sigma": 0.0, "initial_level": 5e10, "num_distractors": 1,
                    "lag": 10, "seed": 8,
                }
            )
        )
        runner = CliRunner()
        data = tmp_path / "data"
        assert runner.invoke(main, ["synth", "--scenario", str(scn), "--out", str(data)]).exit_code == 0
        out = tmp_path / "bt"
        result = runner.invoke(
            main,
            [
                "backtest", "--cases", str(data / "cases.csv"),
                "--features", str(data / "features.csv"),
                "--lag", "10", "--trees", "20", "--eval-start", "12",
                "--stride", "4", "--ma", "3", "--seed", "1", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        series = read_metrics_csv(out / "metrics.csv")
        assert len(series) > 0
        assert max(r.mape for r in series.records) < 1e-6


class TestEstimateCommand:
    def test_table_sorted_and_complete(self, dataset, tmp_path):
        out = tmp_path / "est"
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "estimate",
                "--cases", str(dataset / "cases.csv"),
                "--features", str(dataset / "features.csv"),
                "--lag", "8",
                "--trees", "30",
                "--seed", "5",
                "--as-of", "2020-04-03",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "estimates.csv").read_text().splitlines()
        assert lines[0] == "fips,state,r_hat,forecast_incident,n_effective"
        rows = [l.split(",") for l in lines[1:]]
        assert len(rows) == SCENARIO["num_counties"]
        rates = [float(r[2]) for r in rows if r[2] != "NA"]
        assert rates == sorted(rates, reverse=True)
        assert (out / "forest.json").exists()

    def test_estimates_near_truth(self, dataset, tmp_path):
        out = tmp_path / "est2"
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "estimate",
                "--cases", str(dataset / "cases.csv"),
                "--features", str(dataset / "features.csv"),
                "--lag", "8", "--trees", "60", "--seed", "5",
                "--as-of", "2020-04-05", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = [l.split(",") for l in (out / "estimates.csv").read_text().splitlines()[1:]]
        rates = np.array([float(r[2]) for r in rows if r[2] != "NA"])
        assert rates.size == SCENARIO["num_counties"]
        assert np.abs(rates - 0.15).max() < 0.08

    def test_out_of_range_date_fails(self, dataset, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "estimate",
                "--cases", str(dataset / "cases.csv"),
                "--features", str(dataset / "features.csv"),
                "--lag", "8", "--as-of", "2021-01-01", "--out", str(tmp_path / "x"),
            ],
        )
        assert result.exit_code == 1
        assert "outside" in result.output

    def test_county_without_recent_block_gets_marker(self, tmp_path):
        # county 00002's counts freeze, so its incident hits 0 before the end
        import csv
        import datetime as dt

        root = tmp_path / "data"
        root.mkdir()
        origin = dt.date(2020, 3, 1)
        with open(root / "cases.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "county", "state", "fips", "cases", "deaths"])
            for t in range(30):
                w.writerow([(origin + dt.timedelta(days=t)).isoformat(), "a", "SY",
                            "00001", 100 + 10 * t, 0])
                w.writerow([(origin + dt.timedelta(days=t)).isoformat(), "b", "SY",
                            "00002", 50 if t < 10 else 50, 0])
        runner = CliRunner()
        out = tmp_path / "est"
        result = runner.invoke(
            main,
            [
                "estimate", "--cases", str(root / "cases.csv"), "--lag", "8",
                "--trees", "20", "--as-of", "2020-03-28", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (out / "estimates.csv").read_text().splitlines()[1:]
        by_fips = {l.split(",")[0]: l.split(",") for l in lines}
        assert by_fips["00002"][2] == "NA"
        assert by_fips["00001"][2] != "NA"
        assert lines[-1].startswith("00002")
