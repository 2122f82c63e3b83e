"""End-to-end tests for the command-line interface.

A tiny moons dataset and a deliberately small model keep the train-based
tests fast; metric quality is not asserted here (the acceptance tests own
that), only artifact structure, determinism, exit codes, and the replayed
validation record.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from tabcf import cli
from tabcf.cli import (EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_TRAINING, EXIT_USAGE,
                       RunConfig, ablation_variants, main, resolve_config)
from tabcf.dataio import load_csv
from tabcf.persist import hash_model, load_bundle
from tabcf.training import TrainConfig

TINY_FLAGS = [
    "--hidden", "16", "--n-blocks", "1", "--dropout-rate", "0.0",
    "--batch-size", "64", "--pretrain-epochs", "4", "--flow-epochs", "4",
    "--joint-epochs", "4", "--ramp-epochs", "2", "--patience", "3",
    "--flow-layers", "4", "--flow-hidden", "8", "--clusters-per-class", "2",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One shared gen-data + train run; read-only for every test."""
    root = tmp_path_factory.mktemp("cli")
    csv = root / "moons.csv"
    assert main(["gen-data", "moons", "--n", "160", "--noise", "0.1",
                 "--seed", "7", "--out", str(csv)]) == EXIT_OK
    model = root / "moons.hcx"
    test_csv = root / "moons_test.csv"
    code = main(["train", "--data", str(csv), "--out", str(model),
                 "--seed", "3", "--test-out", str(test_csv)] + TINY_FLAGS)
    assert code == EXIT_OK
    return root


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# gen-data

def test_gen_data_writes_csv_and_manifest(workdir):
    csv = workdir / "moons.csv"
    manifest = read_json(str(csv) + ".manifest.json")
    assert manifest["rows"] == 160
    assert manifest["columns"] == ["x1", "x2"]
    assert manifest["classes"] == ["0", "1"]
    assert manifest["source"]["seed"] == 7
    table = load_csv(csv, target="label")
    assert len(table) == 160


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["gen-data", "blobs", "--n", "60", "--noise", "1.0",
                     "--seed", "5", "--out", str(out)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_unknown_kind_is_usage_error(tmp_path):
    code = main(["gen-data", "spirals", "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# train

def test_train_artifacts(workdir):
    model = workdir / "moons.hcx"
    assert model.exists()
    manifest = read_json(str(model) + ".manifest.json")
    bundle = load_bundle(model)
    assert manifest["model_hash"] == hash_model(bundle)
    assert manifest["run"]["train"]["seed"] == 3
    assert manifest["run"]["test_fraction"] == 0.2
    assert (workdir / "moons_test.csv").exists()

    log_lines = [json.loads(line) for line in
                 Path(manifest["log"]).read_text().splitlines()]
    assert log_lines[0]["phase"] == "config"
    assert log_lines[0]["run"]["train"]["hidden"] == 16
    assert log_lines[-1]["phase"] == "final"


def test_train_rerun_same_seed_same_hash(workdir, tmp_path):
    model2 = tmp_path / "again.hcx"
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(model2), "--seed", "3"] + TINY_FLAGS)
    assert code == EXIT_OK
    first = read_json(str(workdir / "moons.hcx") + ".manifest.json")
    second = read_json(str(model2) + ".manifest.json")
    assert first["model_hash"] == second["model_hash"]


def test_train_different_seed_different_hash(workdir, tmp_path):
    model2 = tmp_path / "other.hcx"
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(model2), "--seed", "4"] + TINY_FLAGS)
    assert code == EXIT_OK
    first = read_json(str(workdir / "moons.hcx") + ".manifest.json")
    second = read_json(str(model2) + ".manifest.json")
    assert first["model_hash"] != second["model_hash"]


def test_train_missing_data_is_io_error(tmp_path):
    code = main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "m.hcx")])
    assert code == EXIT_IO


def test_train_bad_csv_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,label\n1.0,2.0\n")
    code = main(["train", "--data", str(bad),
                 "--out", str(tmp_path / "m.hcx")])
    assert code == EXIT_DATA


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_train_divergence_exit_code(workdir, tmp_path):
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(tmp_path / "m.hcx"), "--lr", "1e200"]
                + TINY_FLAGS)
    assert code == EXIT_TRAINING


def test_train_unknown_flag_is_usage_error(workdir, tmp_path):
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(tmp_path / "m.hcx"), "--frobnicate", "1"])
    assert code == EXIT_USAGE


def test_train_bad_config_json_is_usage_error(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(tmp_path / "m.hcx"), "--config", str(cfg)])
    assert code == EXIT_USAGE


def test_train_unknown_config_key_is_usage_error(workdir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_rate": 0.1}))
    code = main(["train", "--data", str(workdir / "moons.csv"),
                 "--out", str(tmp_path / "m.hcx"), "--config", str(cfg)])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# config resolution

def test_config_file_defaults_and_flag_overrides(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"lr": 0.5, "hidden": 32, "test_fraction": 0.3}))
    cfg, frac = resolve_config(str(cfg_path), {"lr": 0.25})
    assert cfg.lr == 0.25          # flag beats file
    assert cfg.hidden == 32        # file beats default
    assert cfg.batch_size == 128   # dataclass default
    assert frac == 0.3


def test_config_defaults_without_file():
    cfg, frac = resolve_config(None, {})
    assert cfg == TrainConfig()
    assert frac == 0.2


def test_run_config_round_trip():
    run = RunConfig(train=TrainConfig(seed=9), data="d.csv", target="label",
                    test_fraction=0.25, out="m.hcx", log="m.log")
    assert RunConfig.from_dict(json.loads(json.dumps(run.to_dict()))) == run


def test_ablation_variants_toggle_matrix():
    base = TrainConfig(seed=11)
    rows = dict(ablation_variants(base))
    assert list(rows) == list(cli.ABLATION_ORDER)
    assert rows["Base"].pretrain_alpha == 0.0
    assert not any([rows["Base"].use_cf_ce, rows["Base"].use_proximity,
                    rows["Base"].use_plausibility])
    assert rows["Base+CE"].use_cf_ce and not rows["Base+CE"].use_proximity
    assert rows["Base+CE+Flow"].use_plausibility
    assert not rows["Base+CE+Flow"].use_proximity
    assert rows["Base+CE+Dist"].use_proximity
    assert not rows["Base+CE+Dist"].use_plausibility
    assert all([rows["Full"].use_cf_ce, rows["Full"].use_proximity,
                rows["Full"].use_plausibility])
    assert all(v.seed == 11 for v in rows.values())
    assert all(v.pretrain_alpha == 0.8 for name, v in rows.items()
               if name != "Base")


# ---------------------------------------------------------------------------
# eval

def test_eval_reports_and_replay_matches_log(workdir, tmp_path, capsys):
    report_dir = tmp_path / "report"
    code = main(["eval", "--model", str(workdir / "moons.hcx"),
                 "--data", str(workdir / "moons_test.csv"),
                 "--report", str(report_dir)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "AUROC" in out and "Valid." in out and "Time[s]" in out

    payload = read_json(report_dir / "report.json")
    assert payload["reference_fit"] == "train-split"
    assert 0.0 <= payload["classification"]["auroc"] <= 1.0
    assert set(payload["counterfactuals"]) >= {
        "coverage", "validity", "l1", "l2", "p_plaus", "log_dens",
        "lof", "iso_forest", "seconds"}
    assert payload["config"]["seed"] == 3
    assert (report_dir / "report.txt").read_text().strip() in out

    # the replayed validation metrics equal the log's final record exactly
    manifest = read_json(str(workdir / "moons.hcx") + ".manifest.json")
    final = [json.loads(line) for line in
             Path(manifest["log"]).read_text().splitlines()][-1]
    replay = payload["validation_replay"]
    for key in ("val_accuracy", "validity", "p_plaus", "mean_l2"):
        assert replay[key] == final[key]
    assert payload["matches_log"] is True


def test_eval_without_train_data_falls_back(workdir, tmp_path, capsys):
    # copy the model without its manifest sidecar: no replay, fit on eval data
    model2 = tmp_path / "bare.hcx"
    model2.write_bytes((workdir / "moons.hcx").read_bytes())
    code = main(["eval", "--model", str(model2),
                 "--data", str(workdir / "moons_test.csv"),
                 "--report", str(tmp_path / "rep")])
    assert code == EXIT_OK
    payload = read_json(tmp_path / "rep" / "report.json")
    assert payload["reference_fit"] == "eval-data"
    assert "validation_replay" not in payload


def test_eval_missing_model_is_io_error(tmp_path):
    code = main(["eval", "--model", str(tmp_path / "none.hcx"),
                 "--data", str(tmp_path / "none.csv")])
    assert code == EXIT_IO


def test_eval_unknown_class_is_data_error(workdir, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,label\n0.1,0.2,9\n0.3,0.1,9\n")
    code = main(["eval", "--model", str(workdir / "moons.hcx"),
                 "--data", str(bad)])
    assert code == EXIT_DATA


# ---------------------------------------------------------------------------
# explain

def test_explain_features_json(workdir, capsys):
    code = main(["explain", "--model", str(workdir / "moons.hcx"),
                 "--features", '{"x1": 0.4, "x2": 0.3}'])
    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["predicted_class"] in ("0", "1")
    assert len(payload["counterfactuals"]) == 1  # K - 1 alternatives
    alt = payload["counterfactuals"][0]
    assert set(alt["features"]) == {"x1", "x2"}
    assert set(alt["diffs"]) == {"x1", "x2"}
    assert isinstance(alt["valid"], bool)
    probs = payload["probabilities"]
    assert abs(sum(probs.values()) - 1.0) < 1e-9


def test_explain_row_from_csv(workdir, capsys):
    code = main(["explain", "--model", str(workdir / "moons.hcx"),
                 "--data", str(workdir / "moons_test.csv"), "--index", "2"])
    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    table = load_csv(workdir / "moons_test.csv", target="label")
    assert payload["input"]["x1"] == pytest.approx(table.columns["x1"][2])


def test_explain_requires_one_source(workdir):
    assert main(["explain", "--model", str(workdir / "moons.hcx")]) \
        == EXIT_USAGE
    assert main(["explain", "--model", str(workdir / "moons.hcx"),
                 "--features", "{}", "--data", "x.csv"]) == EXIT_USAGE


def test_explain_bad_features_json(workdir):
    assert main(["explain", "--model", str(workdir / "moons.hcx"),
                 "--features", "{oops"]) == EXIT_USAGE


def test_explain_index_out_of_range(workdir):
    code = main(["explain", "--model", str(workdir / "moons.hcx"),
                 "--data", str(workdir / "moons_test.csv"),
                 "--index", "10000"])
    assert code == EXIT_DATA


# ---------------------------------------------------------------------------
# serve (wiring only; the HTTP behavior is covered by the service tests)

def test_serve_loads_bundle_and_calls_server(workdir, monkeypatch, capsys):
    calls = {}

    def fake_serve(bundle, host, port):
        calls["hash"] = hash_model(bundle)
        calls["addr"] = (host, port)

    monkeypatch.setattr(cli, "serve", fake_serve)
    code = main(["serve", "--model", str(workdir / "moons.hcx"),
                 "--host", "0.0.0.0", "--port", "9000"])
    assert code == EXIT_OK
    manifest = read_json(str(workdir / "moons.hcx") + ".manifest.json")
    assert calls["hash"] == manifest["model_hash"]
    assert calls["addr"] == ("0.0.0.0", 9000)


# ---------------------------------------------------------------------------
# ablation

def test_ablation_rows_and_artifacts(workdir, tmp_path, capsys):
    out_dir = tmp_path / "ablation"
    code = main(["ablation", "--data", str(workdir / "moons.csv"),
                 "--seed", "3", "--pretrain-epochs", "2", "--flow-epochs", "2",
                 "--joint-epochs", "2", "--ramp-epochs", "1",
                 "--hidden", "16", "--n-blocks", "1", "--dropout-rate", "0.0",
                 "--flow-layers", "4", "--flow-hidden", "8",
                 "--clusters-per-class", "2", "--batch-size", "64",
                 "--out", str(out_dir)])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    for name in cli.ABLATION_ORDER:
        assert name in text

    payload = read_json(out_dir / "ablation.json")
    assert [r["name"] for r in payload["rows"]] == list(cli.ABLATION_ORDER)
    assert all(r["ok"] for r in payload["rows"])
    assert payload["rows"][0]["config"]["pretrain_alpha"] == 0.0
    assert payload["rows"][-1]["config"]["use_plausibility"] is True
    assert all(r["config"]["seed"] == 3 for r in payload["rows"])
    for row in payload["rows"]:
        assert set(row["counterfactuals"]) >= {"validity", "l1", "l2",
                                               "p_plaus"}
    assert (out_dir / "ablation.txt").exists()


def test_ablation_row_failure_does_not_abort_others(workdir, tmp_path,
                                                    monkeypatch, capsys):
    from tabcf.training import TrainingError, train as real_train

    def flaky_train(config, dataset, prep, log_path=None):
        if config.use_plausibility and not config.use_proximity:
            raise TrainingError("phase 3 (joint) diverged at step 1")
        return real_train(config, dataset, prep, log_path)

    monkeypatch.setattr(cli, "train", flaky_train)
    code = main(["ablation", "--data", str(workdir / "moons.csv"),
                 "--seed", "3", "--pretrain-epochs", "2", "--flow-epochs", "2",
                 "--joint-epochs", "2", "--ramp-epochs", "1",
                 "--hidden", "16", "--n-blocks", "1", "--dropout-rate", "0.0",
                 "--flow-layers", "4", "--flow-hidden", "8",
                 "--clusters-per-class", "2", "--batch-size", "64",
                 "--out", str(tmp_path / "abl")])
    assert code == EXIT_OK
    captured = capsys.readouterr()
    assert "FAILED" in captured.out
    payload = read_json(tmp_path / "abl" / "ablation.json")
    by_name = {r["name"]: r for r in payload["rows"]}
    assert by_name["Base+CE+Flow"]["ok"] is False
    assert "diverged" in by_name["Base+CE+Flow"]["error"]
    done = [n for n, r in by_name.items() if r["ok"]]
    assert set(done) == set(cli.ABLATION_ORDER) - {"Base+CE+Flow"}


# ---------------------------------------------------------------------------
# dispatch

def test_help_exits_zero():
    assert main(["--help"]) == EXIT_OK


def test_no_subcommand_is_usage_error():
    assert main([]) == EXIT_USAGE


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == EXIT_USAGE
