"""End-to-end tests of the command-line interface, run in process."""
from __future__ import annotations

import json
import os

import numpy as np
import pandas as pd
import pytest

from lvdfm.cli import cli_main

N_SERIES = 8
T_EST = 95  # estimation sample; the full panel keeps 100 periods


def base_config():
    return {
        "dgp": {"n_series": N_SERIES, "t_total": 130, "t_burn": 30, "seed": 4},
        "model": {"n_series": N_SERIES, "n_draws": 24, "n_burn": 4, "thin": 1,
                  "n_particles": 24, "lag_idio": 1, "seed": 11},
        "forecast": {"horizons": [1, 2], "m_per_draw": 5, "tail": [0.1, 0.9]},
        "fevd": {"series": ["s000", "s001"], "horizons": [1, 4],
                 "n_sims": 200, "max_draws": 10},
        "targets": ["s000", "s002"],
    }


def grouped_config():
    cfg = base_config()
    cfg["model"].update({"n_level": 3, "n_vol": 3, "n_draws": 8, "n_burn": 2,
                         "n_particles": 16, "seed": 13})
    # series 1 anchors the AE column and series 2 the EMDE column
    cfg["groups"] = ["AE", "AE", "EMDE", "EMDE"] * (N_SERIES // 4)
    return cfg


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    return str(path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def assert_dirs_equal(d1, d2):
    files1 = sorted(os.path.relpath(os.path.join(r, f), d1)
                    for r, _, fs in os.walk(d1) for f in fs)
    files2 = sorted(os.path.relpath(os.path.join(r, f), d2)
                    for r, _, fs in os.walk(d2) for f in fs)
    assert files1 == files2
    for rel in files1:
        assert read_bytes(os.path.join(d1, rel)) == read_bytes(os.path.join(d2, rel)), rel


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full pipeline once and hand out the artifact paths."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_json(root / "config.json", base_config())
    cfg_grouped = write_json(root / "config_grouped.json", grouped_config())

    sim_dir = root / "sim"
    assert cli_main(["simulate", "--config", cfg, "--out", str(sim_dir)]) == 0
    panel_csv = sim_dir / "panel.csv"

    trunc_csv = root / "panel_est.csv"
    pd.read_csv(panel_csv).iloc[:T_EST].to_csv(trunc_csv, index=False)

    lv_arch = root / "arch_lv"
    bench_arch = root / "arch_bench"
    grp_arch = root / "arch_grouped"
    assert cli_main(["estimate", "--config", cfg, "--data", str(trunc_csv),
                     "--model", "lv", "--out", str(lv_arch)]) == 0
    assert cli_main(["estimate", "--config", cfg, "--data", str(trunc_csv),
                     "--model", "benchmark", "--out", str(bench_arch)]) == 0
    assert cli_main(["estimate", "--config", cfg_grouped, "--data", str(trunc_csv),
                     "--model", "lv", "--out", str(grp_arch)]) == 0

    fdir = root / "forecasts"
    assert cli_main(["forecast", "--config", cfg, "--data", str(panel_csv),
                     "--archive", str(lv_arch), "--archive", str(bench_arch),
                     "--out", str(fdir)]) == 0

    scores_dir = root / "scores"
    os.makedirs(scores_dir)
    assert cli_main(["evaluate", "--forecast-dir", str(fdir),
                     "--out", str(scores_dir)]) == 0

    fevd_dir = root / "fevd"
    os.makedirs(fevd_dir)
    assert cli_main(["fevd", "--config", cfg, "--archive", str(lv_arch),
                     "--out", str(fevd_dir)]) == 0

    return {"root": root, "cfg": cfg, "cfg_grouped": cfg_grouped,
            "sim": sim_dir, "panel": panel_csv, "trunc": trunc_csv,
            "lv": lv_arch, "bench": bench_arch, "grouped": grp_arch,
            "forecasts": fdir, "scores": scores_dir / "scores.csv",
            "fevd": fevd_dir / "fevd.csv"}


class TestSimulate:
    def test_outputs(self, pipeline):
        sim = pipeline["sim"]
        df = pd.read_csv(sim / "panel.csv")
        assert df.shape == (100, N_SERIES + 1)
        assert list(df.columns[:2]) == ["date", "s000"]
        assert df["date"].iloc[0] == "1960Q1"
        meta = json.loads(read_bytes(sim / "meta.json"))
        assert meta["seed"] == 4 and meta["n_periods"] == 100
        for name in ("factors", "level_loadings", "vol_loadings", "idio_ar",
                     "dofs", "mixing", "idio_var"):
            assert (sim / "truth" / f"{name}.csv").exists()

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out2 = tmp_path / "sim2"
        assert cli_main(["simulate", "--config", pipeline["cfg"],
                         "--out", str(out2)]) == 0
        assert_dirs_equal(str(pipeline["sim"]), str(out2))

    def test_seed_flag_changes_output(self, pipeline, tmp_path):
        out2 = tmp_path / "sim_seeded"
        assert cli_main(["simulate", "--config", pipeline["cfg"], "--seed", "99",
                         "--out", str(out2)]) == 0
        meta = json.loads(read_bytes(out2 / "meta.json"))
        assert meta["seed"] == 99
        assert read_bytes(out2 / "panel.csv") != read_bytes(pipeline["sim"] / "panel.csv")

    def test_env_seed_overrides(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv("LVDFM_SEED", "777")
        out2 = tmp_path / "sim_env"
        assert cli_main(["simulate", "--config", pipeline["cfg"], "--seed", "99",
                         "--out", str(out2)]) == 0
        meta = json.loads(read_bytes(out2 / "meta.json"))
        assert meta["seed"] == 777


class TestEstimate:
    def test_archive_contents(self, pipeline):
        manifest = json.loads(read_bytes(pipeline["lv"] / "manifest.json"))
        assert manifest["model"] == "lv"
        assert manifest["panel"]["n_periods"] == T_EST
        assert manifest["panel"]["labels"][0] == "s000"
        bench = json.loads(read_bytes(pipeline["bench"] / "manifest.json"))
        assert bench["model"] == "benchmark"

    def test_grouped_archive_records_groups(self, pipeline):
        manifest = json.loads(read_bytes(pipeline["grouped"] / "manifest.json"))
        assert manifest["groups"] == ["AE", "AE", "EMDE", "EMDE"] * (N_SERIES // 4)

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out2 = tmp_path / "arch2"
        assert cli_main(["estimate", "--config", pipeline["cfg"],
                         "--data", str(pipeline["trunc"]),
                         "--model", "lv", "--out", str(out2)]) == 0
        assert_dirs_equal(str(pipeline["lv"]), str(out2))

    def test_missing_data_file_is_runtime_error(self, pipeline, tmp_path, capsys):
        rc = cli_main(["estimate", "--config", pipeline["cfg"],
                       "--data", str(tmp_path / "nope.csv"),
                       "--out", str(tmp_path / "a")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")


class TestForecast:
    def test_outputs(self, pipeline):
        fdir = pipeline["forecasts"]
        origin = T_EST - 1
        for model in ("lv", "benchmark"):
            draws = pd.read_csv(fdir / f"draws_{model}_{origin}.csv")
            assert len(draws) > 0
        realized = pd.read_csv(fdir / "realized.csv")
        assert len(realized) == 4  # 2 horizons x 2 targets
        thresholds = pd.read_csv(fdir / "thresholds.csv")
        assert len(thresholds) == 4
        failures = pd.read_csv(fdir / "failures.csv")
        assert len(failures) == 0
        meta = json.loads(read_bytes(fdir / "meta.json"))
        assert meta["seed"] == 0

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out2 = tmp_path / "forecasts2"
        assert cli_main(["forecast", "--config", pipeline["cfg"],
                         "--data", str(pipeline["panel"]),
                         "--archive", str(pipeline["lv"]),
                         "--archive", str(pipeline["bench"]),
                         "--out", str(out2)]) == 0
        assert_dirs_equal(str(pipeline["forecasts"]), str(out2))

    def test_mismatched_archive_panel(self, pipeline, tmp_path, capsys):
        other = pd.read_csv(pipeline["panel"]).iloc[:T_EST]
        other = other.rename(columns={"s000": "other"})
        other_csv = tmp_path / "other.csv"
        other.to_csv(other_csv, index=False)
        rc = cli_main(["forecast", "--config", pipeline["cfg"],
                       "--data", str(other_csv),
                       "--archive", str(pipeline["lv"]),
                       "--out", str(tmp_path / "f")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error:" in err


class TestEvaluate:
    def test_score_table(self, pipeline):
        df = pd.read_csv(pipeline["scores"])
        assert list(df.columns) == ["model", "target", "horizon", "metric",
                                    "value", "ratio", "dm_stat", "p"]
        assert set(df["model"]) == {"lv", "benchmark"}
        assert set(df["metric"]) == {"rmse", "crps", "twcrps_left", "twcrps_right"}
        assert set(df["target"]) == {"s000", "s002"}
        assert len(df) == 2 * 2 * 2 * 4
        assert np.all(np.isfinite(df["value"]))
        lv_rows = df[df["model"] == "lv"]
        assert np.all(np.isfinite(lv_rows["ratio"]))

    def test_rerun_identical(self, pipeline, tmp_path):
        out2 = tmp_path / "scores.csv"
        assert cli_main(["evaluate", "--forecast-dir", str(pipeline["forecasts"]),
                         "--out", str(out2)]) == 0
        assert read_bytes(pipeline["scores"]) == read_bytes(out2)


class TestFevd:
    def test_share_table(self, pipeline):
        df = pd.read_csv(pipeline["fevd"])
        assert list(df.columns) == ["series", "horizon", "shock",
                                    "share_median", "residual_median"]
        assert set(df["series"]) == {"s000", "s001"}
        assert set(df["horizon"]) == {1, 4}
        assert len(df) == 2 * 2 * 2  # series x horizons x shocks
        shares = df.groupby(["series", "horizon"])["share_median"].sum()
        assert np.all(shares > 0)

    def test_grouped_archive(self, pipeline, tmp_path):
        out2 = tmp_path / "fevd_grouped.csv"
        assert cli_main(["fevd", "--config", pipeline["cfg_grouped"],
                         "--archive", str(pipeline["grouped"]),
                         "--out", str(out2)]) == 0
        df = pd.read_csv(out2)
        assert set(df["shock"]) == {"world-level", "ae-level", "emde-level",
                                    "world-vol", "ae-vol", "emde-vol"}


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert cli_main(["bogus"]) == 2
        capsys.readouterr()

    def test_missing_required_argument(self, capsys):
        assert cli_main(["simulate"]) == 2
        capsys.readouterr()

    def test_no_arguments(self, capsys):
        assert cli_main([]) == 2
        capsys.readouterr()
