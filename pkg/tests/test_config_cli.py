import json
from pathlib import Path

import numpy as np
import pytest

from posedp.cli import main
from posedp.configio import dumps_config, load_config_file, loads_config, write_config_file
from posedp.data import load_dataset
from posedp.harness import ExperimentConfig, load_checkpoint
from posedp.report import REPORT_COLUMNS, BenchmarkRow, load_rows, save_rows, sort_rows, write_report


# ---------------------------------------------------------------------------
# config files


def test_parse_basic_pairs_comments_blanks():
    text = """
    # experiment setup
    task.id = reach
    train.epochs = 3   # short run
    observation.mode=gt_pose

    tracker.sigma_pos = 0.0006
    """
    mapping = loads_config(text)
    assert mapping == {
        "task.id": "reach",
        "train.epochs": "3",
        "observation.mode": "gt_pose",
        "tracker.sigma_pos": "0.0006",
    }


def test_parse_rejects_missing_equals():
    with pytest.raises(ValueError, match="line 2"):
        loads_config("a = 1\nbroken line\n")


def test_duplicate_keys_last_wins():
    assert loads_config("a.b = 1\na.b = 2\n") == {"a.b": "2"}


def test_config_file_to_experiment_config(tmp_path):
    path = tmp_path / "exp.cfg"
    write_config_file({
        "task.id": "stack",
        "observation.mode": "est_pose",
        "model.hidden_width": 48,
        "train.epochs": 7,
        "train.ema_enabled": "false",
        "tracker.first_visible_frame": "1,3",
    }, path)
    cfg = ExperimentConfig.from_file(path)
    assert cfg.task_id == "stack"
    assert cfg.mode == "est_pose"
    assert cfg.hidden_width == 48
    assert cfg.epochs == 7
    assert cfg.ema_enabled is False
    assert cfg.tracker.first_visible_frame == (1, 3)


def test_config_round_trip_through_text():
    cfg = ExperimentConfig(task_id="push_to_goal", mode="grid_image", hidden_width=9, epochs=2)
    text = dumps_config(cfg.to_mapping())
    again = ExperimentConfig.from_mapping(loads_config(text))
    assert again == cfg


def test_bad_value_reports_key():
    with pytest.raises(ValueError, match="train.epochs"):
        ExperimentConfig.from_mapping({"train.epochs": "many"})


# ---------------------------------------------------------------------------
# report files


def _rows():
    return [
        BenchmarkRow(task="reach", mode="grid_image", params=450_000, sr=0.5, te_seconds=0.3),
        BenchmarkRow(task="reach", mode="est_pose", params=55_000, sr=1.0, te_seconds=0.1,
                     position_error=0.0006, orientation_error=0.7858),
        BenchmarkRow(task="reach", mode="grid_image", params=55_000, sr=0.1, te_seconds=0.11),
    ]


def test_report_csv_header_and_sorting(tmp_path):
    csv_path, txt_path = write_report(_rows(), tmp_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 4
    fields = [ln.split(",") for ln in lines[1:]]
    assert [f[1] for f in fields] == ["est_pose", "grid_image", "grid_image"]
    assert [int(f[2]) for f in fields[1:]] == [55_000, 450_000]
    srs = [float(f[3]) for f in fields]
    assert all(0.0 <= s <= 1.0 for s in srs)
    assert txt_path.read_text().count("\n") >= 5


def test_report_rows_json_round_trip(tmp_path):
    path = tmp_path / "results.json"
    save_rows(_rows(), path)
    again = load_rows(path)
    assert again == _rows()


def test_row_validates_ranges():
    with pytest.raises(ValueError, match="success rate"):
        BenchmarkRow(task="reach", mode="gt_pose", params=1, sr=1.5, te_seconds=1.0)
    with pytest.raises(ValueError, match="epoch time"):
        BenchmarkRow(task="reach", mode="gt_pose", params=1, sr=0.5, te_seconds=0.0)


def test_single_row_report(tmp_path):
    csv_path, _ = write_report(_rows()[:1], tmp_path, stem="solo")
    assert len(csv_path.read_text().strip().splitlines()) == 2


# ---------------------------------------------------------------------------
# CLI end to end (micro scale)


@pytest.fixture(scope="module")
def micro_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.cfg"
    write_config_file({
        "task.id": "reach",
        "observation.mode": "gt_pose",
        "model.hidden_width": 16,
        "train.epochs": 2,
        "data.n_demos": 4,
        "task.t_max": 30,
        "eval.n_rollouts": 2,
        "diffusion.steps": 25,
    }, path)
    return path


def test_cli_gen_train_eval(tmp_path, micro_config, capsys):
    data = tmp_path / "d.bin"
    ckpt = tmp_path / "p.ckpt"
    assert main(["gen-data", "--config", str(micro_config), "--out", str(data)]) == 0
    assert data.exists()
    assert load_dataset(data).task_id == "reach"

    assert main(["train", "--config", str(micro_config), "--data", str(data), "--out", str(ckpt)]) == 0
    assert ckpt.exists()
    loaded = load_checkpoint(ckpt)
    assert loaded.config.task_id == "reach"

    assert main(["eval", "--checkpoint", str(ckpt), "--n", "2", "--seed", "50"]) == 0
    out = capsys.readouterr().out
    assert "success rate" in out


def test_cli_seed_override(tmp_path, micro_config):
    d1 = tmp_path / "a.bin"
    d2 = tmp_path / "b.bin"
    main(["gen-data", "--config", str(micro_config), "--out", str(d1), "--seed", "5"])
    main(["gen-data", "--config", str(micro_config), "--out", str(d2), "--seed", "6"])
    a, b = load_dataset(d1), load_dataset(d2)
    assert a.episode_env_seeds != b.episode_env_seeds


def test_cli_bench_and_report(tmp_path, micro_config, capsys):
    out_dir = tmp_path / "bench"
    assert main(["bench", "--config", str(micro_config), "--out", str(out_dir)]) == 0
    csv_path = out_dir / "benchmark.csv"
    results = out_dir / "results.json"
    assert csv_path.exists() and (out_dir / "benchmark.txt").exists() and results.exists()
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 5  # four capacity tiers

    rows = load_rows(results)
    assert sort_rows(rows) == rows or len(rows) == 4

    report_dir = tmp_path / "re"
    assert main(["report", "--results", str(results), "--out", str(report_dir)]) == 0
    assert (report_dir / "benchmark.csv").read_text() == csv_path.read_text()
