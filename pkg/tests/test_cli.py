import csv
import json

import numpy as np
import pytest

from dsic import ablate as ablate_mod
from dsic.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY, main
from dsic.config import serialize_config


@pytest.fixture
def cfg_file(tiny_cfg, tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(serialize_config(tiny_cfg.replace(steps=10, log_every=5)))
    return path


@pytest.fixture
def trained(cfg_file, tmp_path):
    out = tmp_path / "trained"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    return out


def test_train_writes_artifacts(trained):
    for name in ("metrics.csv", "config.txt", "snapshot.npz", "gates.csv"):
        assert (trained / name).is_file()
    rows = list(csv.reader((trained / "metrics.csv").open()))
    assert rows[0] == ["step", "loss", "lr"]
    assert [int(r[0]) for r in rows[1:]] == [0, 5, 10]
    assert all(np.isfinite(float(r[1])) for r in rows[1:])


def test_train_is_byte_deterministic(cfg_file, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / name), "--workers", "1"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval_prints_metrics(trained, capsys):
    assert main(["eval", "--snapshot", str(trained / "snapshot.npz"), "--out", str(trained)]) == EXIT_OK
    metrics = json.loads((trained / "eval.json").read_text())
    assert {"mse", "f1"} <= set(metrics)
    assert json.loads(capsys.readouterr().out) == metrics


def test_export_gates(trained):
    out = trained / "gates"
    code = main(
        ["export-gates", "--snapshot", str(trained / "snapshot.npz"), "--seeds", "3", "4", "--out", str(out)]
    )
    assert code == EXIT_OK
    for sid in (3, 4):
        assert (out / f"csg_{sid}.pgm").read_bytes()[:11] == b"P5\n4 4\n255\n"
        assert len((out / f"csg_{sid}.csv").read_text().splitlines()) == 5
        assert (out / f"isg_{sid}.csv").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--config", "/nonexistent/run.cfg"],
        ["eval", "--snapshot", "/nonexistent/snap.npz"],
    ],
)
def test_io_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_IO
    assert capsys.readouterr().err.startswith("dsic: ")


def test_bad_config_syntax_exits_2(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("steps: ten\n")
    assert main(["train", "--config", str(path)]) == EXIT_IO


def test_semantic_config_error_exits_3(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("placement = outer\ncsg_mode = softmax\n")
    assert main(["train", "--config", str(path)]) == EXIT_CONFIG


def test_unknown_axis_exits_3(capsys):
    assert main(["ablate", "colour"]) == EXIT_CONFIG
    assert "unknown ablation axis" in capsys.readouterr().err


@pytest.mark.parametrize("axis, arms", [("component", 4), ("mode", 6), ("stride", 3), ("fs", 3), ("csg_placement", 4)])
def test_ablate_rows(axis, arms, cfg_file, tmp_path, monkeypatch):
    calls = []

    def fake_train(cfg):
        calls.append(cfg)
        return cfg

    monkeypatch.setattr(ablate_mod, "train", fake_train)
    monkeypatch.setattr(ablate_mod, "evaluate", lambda cfg: {"mse": float(cfg.seed), "f1": 0.0})
    out = tmp_path / "abl"
    assert main(["ablate", axis, "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / f"ablation_{axis}.csv").open()))
    assert len(rows) == arms
    assert len(calls) == arms * 2
    assert all(float(r["median_mse"]) == 1.5 for r in rows)


def test_verify_pristine_and_injected(capsys):
    assert main(["verify"]) == EXIT_OK
    assert capsys.readouterr().out.rstrip().endswith("checks passed")
    assert main(["verify", "--inject", "softmax"]) == EXIT_VERIFY
    assert "FAILED:" in capsys.readouterr().out


def test_zero_init_snapshot_exports_zero_matrices(tiny_cfg, tmp_path):
    from dsic.model import init_model
    from dsic.serialize import save_snapshot

    cfg = tiny_cfg.replace(gate_init="zero")
    save_snapshot(tmp_path / "s.npz", init_model(cfg), cfg)
    out = tmp_path / "gates"
    assert main(["export-gates", "--snapshot", str(tmp_path / "s.npz"), "--seeds", "5", "6", "--out", str(out)]) == 0
    for sid in (5, 6):
        assert (out / f"csg_{sid}.pgm").read_bytes()[11:] == bytes(16)
        rows = list(csv.reader((out / f"csg_{sid}.csv").open()))[1:]
        assert all(float(v) == 0.0 for row in rows for v in row[1:])


def test_ablation_baseline_rows_repeat(cfg_file, tmp_path):
    tables = []
    for name in ("x", "y"):
        out = tmp_path / name
        assert main(["ablate", "stride", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
        tables.append(list(csv.DictReader((out / "ablation_stride.csv").open())))
    assert tables[0][0]["arm"] == "baseline"
    assert tables[0][0] == tables[1][0]
