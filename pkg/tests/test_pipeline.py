import json
from pathlib import Path

import numpy as np
import pytest

from mlcap import cli
from mlcap import pipeline as pl
from mlcap.cat import load_reports, read_trajectory_csv
from mlcap.cdi import CLASS1, CLASS2, read_cdi_csv
from mlcap.classifier import TrainedModel
from mlcap.dataprep import SplitAssignment
from mlcap.gate import MlcCertificate
from mlcap.irt import ItemBank
from mlcap.synthetic import make_pulsar_like, write_htru2_csv

SMALL_GRID = {"activations": ["tanh"], "learning_rates": [0.1], "hidden_units": [6]}


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory):
    table, _ = make_pulsar_like(n=4000, n_pulsar=400, seed=3)
    path = tmp_path_factory.mktemp("data") / "htru.csv"
    write_htru2_csv(table, path)
    return path


def config_dict(data, out, seed=0):
    return {"name": "synthetic", "data": str(data), "schema": "builtin:htru2",
            "coding_spec": "builtin:pulsar_auto", "seed": seed, "grid": SMALL_GRID,
            "folds": 3, "train": {"epochs": 30}, "out_dir": str(out)}


@pytest.fixture(scope="session")
def run(synthetic_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = pl.RunConfig.from_dict(config_dict(synthetic_csv, out))
    return cfg, pl.run_pipeline(cfg)


class TestRunPipeline:
    def test_artifacts_written(self, run):
        cfg, _ = run
        for name in pl.ARTIFACTS.values():
            assert (Path(cfg.out_dir) / name).exists(), name

    def test_report_contents(self, run):
        _, report = run
        assert report["format"] == "mlcap.comparison"
        assert report["dataset_size"] == 800 and report["raw_dataset_size"] == 4000
        assert report["class_counts"] == {"1": 400, "2": 400}
        assert report["traditional"]["accuracy"] >= 0.8
        for cls in ("1", "2"):
            m = report["mlc"][cls]
            assert m["cases_used"] >= 5 and m["mlc"] is not None
            assert m["fraction_of_dataset"] == pytest.approx(m["cases_used"] / 800)
        t = report["timing"]
        assert t["cat_total_seconds"] > 0 and t["traditional_seconds"] > 0

    def test_artifact_round_trips(self, run):
        cfg, report = run
        out = Path(cfg.out_dir)
        bank = ItemBank.load(out / "itembank.json")
        assert bank.model_kind == "graded" and len(bank) == 4
        records = read_cdi_csv(out / "cdi.csv")
        assert len(records) == 800 and all(r.is_oriented for r in records)
        split = SplitAssignment.read_csv(out / "split.csv")
        assert set(split.roles) == {r.case_id for r in records}
        TrainedModel.load(out / "model.json")
        reports = load_reports(out / "mlc.json")
        assert reports[CLASS1].mlc == report["mlc"]["1"]["mlc"]
        assert read_trajectory_csv(out / "cat_class2.csv") == reports[CLASS2].trajectory
        cert = MlcCertificate.load(out / "certificate.json")
        assert (cert.mlc_class1, cert.mlc_class2) == (reports[CLASS1].mlc, reports[CLASS2].mlc)
        assert json.loads((out / "comparison.json").read_text())["mlc"]["2"]["mlc"] == report["mlc"]["2"]["mlc"]
        assert "MLC (class 1)" in (out / "comparison.txt").read_text()

    def test_cat_only_uses_test_cases(self, run):
        cfg, _ = run
        out = Path(cfg.out_dir)
        test_ids = set(SplitAssignment.read_csv(out / "split.csv").test_ids)
        for name in ("cat_class1.csv", "cat_class2.csv"):
            assert {r["case_id"] for r in read_trajectory_csv(out / name)} <= test_ids

    def test_deterministic(self, run, synthetic_csv, tmp_path):
        _, report = run
        again = pl.run_pipeline(pl.RunConfig.from_dict(config_dict(synthetic_csv, tmp_path)))
        a, b = pl.strip_timing(report), pl.strip_timing(again)
        a["config"].pop("out_dir"), b["config"].pop("out_dir")
        assert a == b

    def test_monotone_bins_helper(self):
        rows = [{"class_label": 2, "bin_lower": 0.0, "n": 30, "accuracy": 0.9},
                {"class_label": 2, "bin_lower": 0.25, "n": 5, "accuracy": 1.0},
                {"class_label": 2, "bin_lower": 0.5, "n": 30, "accuracy": 0.95}]
        assert pl.monotonicity_violations(rows) == [(2, 0.0, 0.5, 0.9, 0.95)]
        assert pl.monotonicity_violations(rows, min_cases=50) == []


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ValueError):
            pl.RunConfig.from_dict({"data": "x", "schema": "builtin:htru2", "coding_spec": "builtin:pulsar_auto",
                                    "bogus": 1})

    def test_relative_paths(self, tmp_path):
        cfg = pl.RunConfig.from_dict({"data": "d.csv", "schema": "builtin:htru2", "coding_spec": "spec.json",
                                      "out_dir": "o"}, base_dir=tmp_path)
        assert cfg.data == str(tmp_path / "d.csv") and cfg.coding_spec == str(tmp_path / "spec.json")

    def test_bad_cat_settings(self):
        with pytest.raises(ValueError):
            pl.RunConfig("x", "builtin:htru2", "builtin:pulsar_auto", cat={"jitter_sd": 0.5})


class TestCli:
    def write_config(self, tmp_path, data, **extra):
        d = config_dict(data, tmp_path / "out")
        d.update(extra)
        p = tmp_path / "run.json"
        p.write_text(json.dumps(d))
        return p

    def test_stepwise_subcommands(self, tmp_path, synthetic_csv, capsys):
        cfg = str(self.write_config(tmp_path, synthetic_csv))
        for cmd in ("fit-irt", "score-cdi", "split", "train", "evaluate", "cat"):
            assert cli.main([cmd, "--config", cfg]) == 0, cmd
        out = tmp_path / "out"
        assert (out / "certificate.json").exists() and (out / "metrics.json").exists()
        capsys.readouterr()
        assert cli.main(["gate", "--certificate", str(out / "certificate.json"), "--cdi", "-3.9",
                         "--predicted", "class2"]) == 0
        assert json.loads(capsys.readouterr().out)["verdict"] == "algorithm"

    def test_gate_batch(self, tmp_path, capsys):
        cert = tmp_path / "c.json"
        MlcCertificate("m", 0.43, 0.78).save(cert)
        batch = tmp_path / "b.csv"
        batch.write_text("case_id,raw_cdi,predicted_class\na,0.80,class2\nb,0.80,class1\n")
        assert cli.main(["gate", "--certificate", str(cert), "--batch", str(batch)]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert [r["verdict"] for r in rows] == ["human_review", "algorithm"]

    def test_exit_codes(self, tmp_path, synthetic_csv):
        assert cli.main(["fit-irt", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CODES["config"]
        bad_data = self.write_config(tmp_path, tmp_path / "nope.csv")
        assert cli.main(["fit-irt", "--config", str(bad_data)]) == cli.EXIT_CODES["data"]
        ok = str(self.write_config(tmp_path, synthetic_csv))
        assert cli.main(["split", "--config", ok, "--out-dir", str(tmp_path / "empty")]) == cli.EXIT_CODES["split"]
        assert cli.main(["cat", "--config", ok, "--out-dir", str(tmp_path / "empty")]) == cli.EXIT_CODES["cat"]
        assert cli.main(["gate", "--certificate", str(tmp_path / "none.json"), "--cdi", "0",
                         "--predicted", "1"]) == cli.EXIT_CODES["gate"]

    def test_overrides(self, tmp_path, synthetic_csv, capsys):
        cfg = str(self.write_config(tmp_path, synthetic_csv))
        code = cli.main(["run-all", "--config", cfg, "--seed", "4", "--out-dir", str(tmp_path / "o2"),
                         "--jitter-sd", "0.05", "--stop-window", "4", "--epochs", "10"])
        assert code == 0
        rep = json.loads((tmp_path / "o2" / "comparison.json").read_text())
        assert rep["config"]["seed"] == 4
        assert rep["config"]["cat"] == {"jitter_sd": 0.05, "stop_window": 4}
        assert "MLC (class 2)" in capsys.readouterr().out


@pytest.mark.parametrize("name", ["pulsar.json", "synthetic.json"])
def test_shipped_configs_load(name):
    root = Path(__file__).resolve().parents[1]
    cfg = pl.RunConfig.load(root / "configs" / name)
    assert Path(cfg.data).is_absolute()
    cfg.csv_schema(), cfg.coding()
