import json

import numpy as np
import pandas as pd
import pytest

from sparsehl.cli import main
from sparsehl.hierarchy import load_hierarchy_spec, from_metadata
from sparsehl.pipeline import load_panel

FAST = ["--n-estimators", "15", "--learning-rate", "0.2", "--num-leaves", "8", "--min-child-samples", "5",
        "--early-stopping-rounds", "5", "--horizon", "7", "--train-days", "60"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-series", "12", "--n-days", "120", "--n-stores", "2", "--n-depts", "2",
                 "--out-dir", str(d), "--seed", "1"]) == 0
    return d


def data_args(d):
    return ["--data", str(d / "panel.csv"), "--meta", str(d / "meta.csv"), "--hierarchy", str(d / "hierarchy.json")]


def test_synth_outputs(synth_dir):
    for name in ("panel.csv", "meta.csv", "hierarchy.json", "run.json"):
        assert (synth_dir / name).exists()
    run = json.loads((synth_dir / "run.json").read_text())
    assert run["command"] == "synth" and "version" in run and run["config"]["n_series"] == 12
    assert load_panel(synth_dir / "panel.csv").target.shape == (12, 120)


def test_build_hierarchy(synth_dir, tmp_path):
    assert main(["build-hierarchy", "--meta", str(synth_dir / "meta.csv"), "--hierarchy",
                 str(synth_dir / "hierarchy.json"), "--out-dir", str(tmp_path)]) == 0
    head = (tmp_path / "S.mtx").read_text().splitlines()
    assert head[0].startswith("%%MatrixMarket")
    rows = pd.read_csv(tmp_path / "rows.csv")
    assert rows["label"].iloc[0].startswith("total/")
    assert list(pd.read_csv(tmp_path / "levels.csv")["level"]) == ["total", "store", "dept", "bottom"]


def test_bottom_up_train_forecast_evaluate(synth_dir, tmp_path):
    m = tmp_path / "m"
    assert main(["train", *data_args(synth_dir), *FAST, "--objective", "hl", "--metric", "hl",
                 "--out-dir", str(m)]) == 0
    assert (m / "model.json").exists() and (m / "training_log.csv").exists()
    assert main(["forecast", *data_args(synth_dir), "--models-dir", str(m), "--horizon", "7",
                 "--cutoff", "2019-04-24", "--out-dir", str(m)]) == 0
    fc = pd.read_csv(m / "forecast.csv")
    assert list(fc.columns) == ["series_id", "step", "date", "value"]
    assert len(fc) == 12 * 7 and fc["date"].iloc[0] == "2019-04-24"
    assert main(["reconcile", "--forecasts", str(m / "forecast.csv"), "--meta", str(synth_dir / "meta.csv"),
                 "--hierarchy", str(synth_dir / "hierarchy.json"), "--out-dir", str(m)]) == 0
    rec = pd.read_csv(m / "reconciled.csv")
    assert rec["series_id"].nunique() == 1 + 2 + 4 + 12
    assert main(["evaluate", *data_args(synth_dir), "--forecasts", str(m / "forecast.csv"),
                 "--out-dir", str(m)]) == 0
    rep = pd.read_csv(m / "report.csv")
    assert list(rep["level"]) == ["total", "store", "dept", "bottom", "All series"]
    assert main(["evaluate", *data_args(synth_dir), "--forecasts", str(m / "forecast.csv"),
                 "--baseline", str(m / "report.csv"), "--out-dir", str(m)]) == 0
    assert np.all(pd.read_csv(m / "report.csv")["rel_rmse"] == 1.0)


def test_global_with_reconciler(synth_dir, tmp_path):
    assert main(["train", *data_args(synth_dir), *FAST, "--scenario", "global", "--reconciliation",
                 "mint_shrink", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "model_global.json").exists() and (tmp_path / "reconciler.json").exists()
    assert main(["forecast", *data_args(synth_dir), "--horizon", "7", "--out-dir", str(tmp_path)]) == 0
    assert main(["reconcile", "--forecasts", str(tmp_path / "forecast.csv"), "--meta", str(synth_dir / "meta.csv"),
                 "--hierarchy", str(synth_dir / "hierarchy.json"), "--reconciler", str(tmp_path / "reconciler.json"),
                 "--out-dir", str(tmp_path)]) == 0
    run = json.loads((tmp_path / "run.json").read_text())
    assert run["result"]["coherence_error"] < 1e-6


def test_separate_aggregations_twelve_levels(tmp_path):
    rng = np.random.default_rng(0)
    n, T = 16, 100
    ids = [f"s{i:02d}" for i in range(n)]
    meta = pd.DataFrame({"series_id": ids})
    levels = [{"name": "total"}]
    for k in range(10):
        meta[f"c{k}"] = [f"g{v}" for v in rng.integers(0, 3, n)]
        levels.append({"name": f"c{k}", "column": f"c{k}"})
    meta.to_csv(tmp_path / "meta.csv", index=False)
    (tmp_path / "h.json").write_text(json.dumps({"levels": levels}))
    dates = pd.date_range("2020-01-01", periods=T).strftime("%Y-%m-%d")
    pd.DataFrame({"series_id": np.repeat(ids, T), "date": np.tile(dates, n),
                  "target": rng.poisson(2.0, n * T)}).to_csv(tmp_path / "panel.csv", index=False)
    h = from_metadata(meta, load_hierarchy_spec(tmp_path / "h.json"))
    assert h.l == 12
    out = tmp_path / "out"
    assert main(["train", "--data", str(tmp_path / "panel.csv"), "--meta", str(tmp_path / "meta.csv"),
                 "--hierarchy", str(tmp_path / "h.json"), *FAST, "--n-estimators", "3",
                 "--scenario", "separate_aggregations", "--reconciliation", "wls_struct", "--out-dir", str(out)]) == 0
    assert len(list(out.glob("model_*.json"))) == 12
    assert len(json.loads((out / "models.json").read_text())["models"]) == 12


def test_reruns_are_bit_identical(synth_dir, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["train", *data_args(synth_dir), *FAST, "--bagging-fraction", "0.7", "--seed", "4",
                     "--out-dir", str(d)]) == 0
        assert main(["forecast", *data_args(synth_dir), "--horizon", "7", "--out-dir", str(d)]) == 0
        outs.append(((d / "model.json").read_bytes(), (d / "forecast.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_config_file(synth_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n-estimators": 2, "horizon": 7, "train_days": 30}))
    assert main(["train", *data_args(synth_dir), "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert len(json.loads((tmp_path / "model.json").read_text())["trees"]) <= 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["train", *data_args(synth_dir), "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


class TestExitCodes:
    def test_missing_hierarchy(self, synth_dir, tmp_path):
        args = ["train", "--data", str(synth_dir / "panel.csv"), "--meta", str(synth_dir / "meta.csv"),
                "--out-dir", str(tmp_path)]
        assert main(args) == 2
        assert main(args + ["--hierarchy", str(tmp_path / "absent.json")]) == 2

    def test_invalid_combination(self, synth_dir, tmp_path, capsys):
        assert main(["train", *data_args(synth_dir), "--scenario", "global", "--objective", "hl",
                     "--out-dir", str(tmp_path)]) == 2
        assert "valid combinations" in capsys.readouterr().err

    def test_unknown_subcommand_and_flag(self):
        assert main(["fly"]) == 2
        assert main(["synth", "--bogus"]) == 2

    def test_data_error(self, synth_dir, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("series_id,date,target\ns0000,2019-01-01,1\ns0000,2019-01-01,2\n")
        assert main(["train", "--data", str(bad), "--meta", str(synth_dir / "meta.csv"),
                     "--hierarchy", str(synth_dir / "hierarchy.json"), "--out-dir", str(tmp_path)]) == 3
        assert "row(s) 3" in capsys.readouterr().err

    def test_unknown_meta_column(self, synth_dir, tmp_path):
        spec = tmp_path / "h.json"
        spec.write_text(json.dumps({"levels": [{"name": "x", "column": "nope"}]}))
        assert main(["build-hierarchy", "--meta", str(synth_dir / "meta.csv"), "--hierarchy", str(spec),
                     "--out-dir", str(tmp_path)]) == 3

    def test_reconcile_method_rules(self, tmp_path, monkeypatch):
        meta = pd.DataFrame({"series_id": ["a", "b"]})
        meta.to_csv(tmp_path / "meta.csv", index=False)
        (tmp_path / "h.json").write_text(json.dumps({"levels": [{"name": "total"}]}))
        pd.DataFrame({"series_id": ["a", "b"], "step": [1, 1], "value": [1.0, 2.0]}).to_csv(
            tmp_path / "f.csv", index=False)
        assert main(["reconcile", "--forecasts", str(tmp_path / "f.csv"), "--meta", str(tmp_path / "meta.csv"),
                     "--hierarchy", str(tmp_path / "h.json"), "--method", "mint_shrink",
                     "--out-dir", str(tmp_path)]) == 2
        assert main(["reconcile", "--forecasts", str(tmp_path / "f.csv"), "--meta", str(tmp_path / "meta.csv"),
                     "--hierarchy", str(tmp_path / "h.json"), "--method", "bottom_up",
                     "--out-dir", str(tmp_path)]) == 0
        out = pd.read_csv(tmp_path / "reconciled.csv")
        assert out["value"].tolist() == [3.0, 1.0, 2.0]

        import sparsehl.cli as cli

        def singular(*a, **k):
            raise cli.NumericalError("singular")

        monkeypatch.setattr(cli, "fit_reconciler", singular)
        assert main(["reconcile", "--forecasts", str(tmp_path / "f.csv"), "--meta", str(tmp_path / "meta.csv"),
                     "--hierarchy", str(tmp_path / "h.json"), "--method", "ols", "--out-dir", str(tmp_path)]) == 4


def test_bench_quick(tmp_path):
    assert main(["bench", "--sizes", "50", "100", "--levels", "4", "--n-te", "7", "--repeats", "1",
                 "--warmup", "0", "--skip-scenarios", "--no-plots", "--out-dir", str(tmp_path)]) == 0
    header = (tmp_path / "bench_gradient.csv").read_text().splitlines()[0].split(",")
    assert header == ["n_b", "l", "n_te", "nnz", "sparse_s", "dense_s", "dense_direct_s", "speedup"]
    assert set(json.loads((tmp_path / "bench_slopes.json").read_text())) == {"sparse", "dense", "dense_direct"}
