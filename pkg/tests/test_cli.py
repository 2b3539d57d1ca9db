import csv
import json

import numpy as np
import pytest
import yaml

from trireserve.cli import main
from trireserve.model import CompanyForecast, Forecast
from trireserve.reserving import evaluate_forecast, write_metrics_csv
from trireserve.synthetic import synthetic_corpus, write_long_csv

SMALL_MODEL = {"ensemble_size": 2, "max_epochs": 3, "patience": 2, "encoder_units": 4, "decoder_units": 4,
               "head_hidden_units": 3, "batch_size": 32}


def make_project(root, companies=3, line="comauto", **extra):
    root.mkdir(parents=True, exist_ok=True)
    write_long_csv(synthetic_corpus(companies, 0.05, seed=1, line=line), root / "data.csv")
    cfg = {"lines": {line: {"path": "data.csv"}}, "output": "out", "seed": 3, "model": dict(SMALL_MODEL),
           "plot_companies": 1, **extra}
    (root / "run.yaml").write_text(yaml.safe_dump(cfg))
    return root / "run.yaml"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    config = make_project(root)
    for cmd in ("ingest", "train", "forecast", "evaluate"):
        assert main([cmd, "--config", str(config)]) == 0
    return root / "out"


class TestPipeline:
    def test_ingest_outputs(self, full_run):
        summary = json.loads((full_run / "ingest" / "summary.json").read_text())
        assert summary["comauto"]["companies"] == 3
        assert summary["comauto"]["grid"] == [10, 10]
        assert len(rows(full_run / "ingest" / "comauto_triangles.csv")) == 300

    def test_train_outputs(self, full_run):
        mdir = full_run / "models" / "comauto"
        assert sorted(p.name for p in mdir.glob("member_*.json")) == ["member_000.json", "member_001.json"]
        manifest = json.loads((mdir / "manifest.json").read_text())
        assert [m["seed"] for m in manifest["members"]] == [3, 4]
        assert manifest["samples"] == {"train": 3 * 28, "validation": 3 * 17}
        assert manifest["package_version"]
        trace = rows(mdir / "trace_000.csv")
        assert 1 <= len(trace) <= 3 and list(trace[0]) == ["epoch", "train_loss", "validation_loss"]

    def test_forecast_outputs(self, full_run):
        fc = rows(full_run / "forecasts" / "comauto_forecast.csv")
        assert {r["model"] for r in fc} == {"DT", "Mack"}
        assert sum(r["model"] == "DT" for r in fc) == 3 * 45
        assert all(float(r["paid"]) >= 0 for r in fc if r["model"] == "DT")

    def test_evaluate_outputs(self, full_run):
        metrics = rows(full_run / "reports" / "metrics.csv")
        computed = [(r["model"], r["metric"]) for r in metrics if r["source"] == "computed"]
        assert computed == [("DT", "MAPE"), ("DT", "RMSPE"), ("Mack", "MAPE"), ("Mack", "RMSPE")]
        assert {r["model"] for r in metrics if r["source"] == "published"} == {"ODP", "CIT", "LIT"}
        assert all(r["companies"] == "3" for r in metrics if r["source"] == "computed")
        detail = rows(full_run / "reports" / "company_detail.csv")
        assert len(detail) == 6
        curves = rows(full_run / "reports" / "development_curves.csv")
        assert len(curves) == 3 * 145
        figures = list((full_run / "reports" / "figures").glob("*.png"))
        assert len(figures) == 1

    def test_config_echo(self, full_run):
        echo = json.loads((full_run / "config.resolved.json").read_text())
        assert echo["seed"] == 3
        assert echo["model_resolved"]["ensemble_size"] == 2
        assert echo["model_resolved"]["learning_rate"] == 5e-4

    def test_rerun_is_byte_identical(self, full_run, tmp_path):
        config = make_project(tmp_path / "again")
        for cmd in ("train", "forecast", "evaluate"):
            assert main([cmd, "--config", str(config), "--output", str(full_run.parent / "rerun")]) == 0
        rerun = full_run.parent / "rerun"
        for rel in ("models/comauto/member_000.json", "models/comauto/member_001.json",
                    "models/comauto/manifest.json", "forecasts/comauto_forecast.csv", "reports/metrics.csv",
                    "reports/company_detail.csv", "reports/development_curves.csv",
                    "reports/figures/comauto_1000.png"):
            assert (full_run / rel).read_bytes() == (rerun / rel).read_bytes(), rel


class TestOverrides:
    def test_flags(self, tmp_path):
        config = make_project(tmp_path, companies=2)
        out = tmp_path / "o"
        code = main(["train", "--config", str(config), "--ensemble-size", "1", "--seed", "9", "--jobs", "1",
                     "--line", "comauto", "--output", str(out)])
        assert code == 0
        manifest = json.loads((out / "models" / "comauto" / "manifest.json").read_text())
        assert [m["seed"] for m in manifest["members"]] == [9]

    def test_unknown_line(self, tmp_path, capsys):
        config = make_project(tmp_path)
        assert main(["ingest", "--config", str(config), "--line", "wkcomp"]) == 1
        assert "wkcomp" in capsys.readouterr().err

    def test_roster_of_one(self, tmp_path):
        root = tmp_path
        write_long_csv(synthetic_corpus(3, 0.05, seed=1), root / "data.csv")
        cfg = {"lines": {"synthetic": {"path": "data.csv", "roster": [1001]}}, "output": "out",
               "model": dict(SMALL_MODEL, ensemble_size=1), "plot_companies": 0}
        (root / "run.yaml").write_text(yaml.safe_dump(cfg))
        for cmd in ("train", "evaluate"):
            assert main([cmd, "--config", str(root / "run.yaml")]) == 0
        metrics = rows(root / "out" / "reports" / "metrics.csv")
        assert {r["companies"] for r in metrics} == {"1"}
        assert {r["source"] for r in metrics} == {"computed"}


class TestErrors:
    def test_missing_premium_column(self, tmp_path, capsys):
        config = make_project(tmp_path)
        data = tmp_path / "data.csv"
        data.write_text(data.read_text().replace("premium", "prem"))
        assert main(["ingest", "--config", str(config)]) == 2
        assert "premium" in capsys.readouterr().err

    def test_empty_file(self, tmp_path, capsys):
        config = make_project(tmp_path)
        (tmp_path / "data.csv").write_text("")
        assert main(["ingest", "--config", str(config)]) == 2
        assert "no records" in capsys.readouterr().err

    def test_missing_model(self, tmp_path, capsys):
        config = make_project(tmp_path)
        assert main(["evaluate", "--config", str(config)]) == 2
        assert str(tmp_path / "out" / "models" / "comauto" / "manifest.json") in capsys.readouterr().err

    def test_bad_usage(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train"])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 1

    def test_missing_config(self, tmp_path, capsys):
        assert main(["ingest", "--config", str(tmp_path / "none.yaml")]) == 1

    def test_invalid_model_setting(self, tmp_path, capsys):
        config = make_project(tmp_path, companies=2)
        assert main(["train", "--config", str(config), "--ensemble-size", "0"]) == 1
        assert "ensemble_size" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        config = make_project(tmp_path, epochs=5)
        assert main(["ingest", "--config", str(config)]) == 1

    def test_training_error_exit_code(self, tmp_path, capsys):
        # a single accident year cutoff leaves no validation samples
        config = make_project(tmp_path, companies=2, validation_after_year=2100)
        assert main(["train", "--config", str(config)]) == 3
        assert "member 0" in capsys.readouterr().err


def test_simulate_writes_runnable_project(tmp_path):
    assert main(["simulate", "--output", str(tmp_path), "--companies", "2"]) == 0
    cfg = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert cfg["lines"]["synthetic"]["path"] == "synthetic.csv"
    assert main(["ingest", "--config", str(tmp_path / "config.yaml")]) == 0


def test_predictions_equal_to_actuals_give_zero_metrics(tmp_path):
    triangles = synthetic_corpus(3, 0.05, seed=2)
    f = Forecast("DT")
    for t in triangles:
        n = t.size
        incr = np.diff(t.full_paid(), axis=1, prepend=0.0)
        pr = np.where(np.isnan(t.paid), incr, np.nan) / t.premium[:, None]
        f.companies[t.company] = CompanyForecast(t.company, t.premium, pr, np.zeros((n, n)))
    rep = evaluate_forecast(triangles, f, "x")
    write_metrics_csv([rep], tmp_path / "m.csv")
    values = [float(r["value"]) for r in rows(tmp_path / "m.csv")]
    assert values == pytest.approx([0.0, 0.0], abs=1e-12)
