import csv
import json

import pytest

from cli import build_parser, main
from config import CHECKPOINT_BLOB, CONFIG_DIR, DEFAULT_PYRAMID_LEVELS, SPLIT_FILES
from run_config import load_run_config

SMOKE = str(CONFIG_DIR / "smoke.yaml")


def run(capsys, *argv) -> tuple[int, str]:
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


@pytest.fixture
def data_dir(tmp_path, capsys):
    out = tmp_path / "data"
    code, stdout = run(capsys, "synth", "-c", SMOKE, "-o", out)
    assert code == 0
    assert stdout == f"{out / 'synth_report.json'}\n"
    return out


@pytest.fixture
def tracked_dir(tmp_path, data_dir, capsys):
    out = tmp_path / "tracked"
    for split, name in SPLIT_FILES.items():
        code, _ = run(capsys, "track", "-c", SMOKE, "--data", data_dir / name, "-o", out / name)
        assert code == 0
    return out


def test_synth_writes_three_splits(data_dir):
    report = json.loads((data_dir / "synth_report.json").read_text(encoding="utf-8"))
    assert report["command"] == "synth"
    assert {s: report["splits"][s]["clips"] for s in ("train", "val", "test")} == {"train": 25, "val": 1, "test": 4}
    assert report["config"]["synth"]["num_classes"] == 3
    for name in SPLIT_FILES.values():
        assert (data_dir / name).exists()


def test_track_report(tracked_dir):
    report = json.loads((tracked_dir / "train.report.json").read_text(encoding="utf-8"))
    assert report["clips"] == 25
    assert report["tracks"] >= 25


def test_full_pipeline(tmp_path, tracked_dir, capsys):
    run_dir = tmp_path / "run"
    code, stdout = run(capsys, "train", "-c", SMOKE, "--data", tracked_dir, "-o", run_dir, "--test")
    assert code == 0
    assert stdout.strip() == str(run_dir / "train_report.json")
    train_report = json.loads((run_dir / "train_report.json").read_text(encoding="utf-8"))
    assert train_report["mode"] == "attn-track"
    assert 0.0 < train_report["test"]["map"] <= 1.0
    assert (run_dir / "checkpoint" / CHECKPOINT_BLOB).exists()

    ckpt = run_dir / "checkpoint"
    test_data = tracked_dir / "test.jsonl"
    out = tmp_path / "reports"
    code, stdout = run(capsys, "eval-classify", "-c", SMOKE, "--checkpoint", ckpt, "--data", test_data,
                       "-o", out / "classify.json")
    assert code == 0 and stdout.strip() == str(out / "classify.json")
    classify = json.loads((out / "classify.json").read_text(encoding="utf-8"))
    assert classify["map"] == pytest.approx(train_report["test"]["map"])

    code, _ = run(capsys, "eval-attention", "-c", SMOKE, "--checkpoint", ckpt, "--data", test_data,
                  "-o", out / "attention.json")
    assert code == 0
    attention = json.loads((out / "attention.json").read_text(encoding="utf-8"))
    assert "chance" in attention
    assert (out / "attention.gammas.jsonl").exists()

    code, stdout = run(capsys, "heatmap", "-c", SMOKE, "--checkpoint", ckpt, "--data", test_data,
                       "-o", out / "heatmap.csv")
    assert code == 0 and stdout.strip() == str(out / "heatmap.csv")
    with open(out / "heatmap.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert rows and set(rows[0]) == {"class", "phase", "gx", "gy", "mass"}


def test_attn_track_requires_tracks(tmp_path, data_dir, capsys):
    code, stdout = run(capsys, "train", "-c", SMOKE, "--data", data_dir, "-o", tmp_path / "run")
    assert code == 4
    assert stdout == ""


def test_mode_override_trains_untracked(tmp_path, data_dir, capsys):
    code, _ = run(capsys, "train", "-c", SMOKE, "--data", data_dir, "-o", tmp_path / "run", "--mode", "frame-only")
    assert code == 0
    report = json.loads((tmp_path / "run" / "train_report.json").read_text(encoding="utf-8"))
    assert report["mode"] == "frame-only"


def test_sweep_table(tmp_path, data_dir, capsys):
    code, _ = run(capsys, "train", "-c", SMOKE, "--data", data_dir, "-o", tmp_path / "sweep", "--sweep", "--steps", "2")
    assert code == 0
    with open(tmp_path / "sweep" / "sweep.csv", newline="", encoding="utf-8") as f:
        modes = [row["mode"] for row in csv.DictReader(f)]
    assert modes == ["frame-only", "only-player", "avg-player", "attn-no-track", "attn-track"]


def test_detect(tmp_path, capsys):
    code, stdout = run(capsys, "detect", "-c", SMOKE, "-o", tmp_path / "detect")
    assert code == 0
    report = json.loads((tmp_path / "detect" / "detect_report.json").read_text(encoding="utf-8"))
    assert report["windows"] == 19
    assert report["train_negative_windows"] > 0
    assert 0.0 < report["map"] <= 1.0


def test_empty_dataset_tracks(tmp_path, data_dir, capsys):
    header = (data_dir / "train.jsonl").read_text(encoding="utf-8").splitlines()[0]
    empty = tmp_path / "empty.jsonl"
    empty.write_text(header + "\n", encoding="utf-8")
    code, _ = run(capsys, "track", "-c", SMOKE, "--data", empty, "-o", tmp_path / "empty.out.jsonl")
    assert code == 0
    assert (tmp_path / "empty.out.jsonl").read_text(encoding="utf-8").strip() == header


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  hidden: 8\n", encoding="utf-8")
    code, stdout = run(capsys, "synth", "-c", bad, "-o", tmp_path / "data")
    assert code == 2
    assert stdout == ""


def test_unknown_mode(tmp_path, capsys):
    assert run(capsys, "synth", "-c", SMOKE, "--mode", "lrcn", "-o", tmp_path)[0] == 2


def test_missing_input(tmp_path, capsys):
    assert run(capsys, "track", "-c", SMOKE, "--data", tmp_path / "nope.jsonl")[0] == 3


def test_corrupt_dataset(tmp_path, capsys):
    path = tmp_path / "broken.jsonl"
    path.write_text("{not json\n", encoding="utf-8")
    assert run(capsys, "track", "-c", SMOKE, "--data", path)[0] == 4


def test_truncated_checkpoint(tmp_path, tracked_dir, capsys):
    run_dir = tmp_path / "run"
    assert run(capsys, "train", "-c", SMOKE, "--data", tracked_dir, "-o", run_dir)[0] == 0
    blob = run_dir / "checkpoint" / CHECKPOINT_BLOB
    blob.write_bytes(blob.read_bytes()[:-4])
    code, _ = run(capsys, "eval-classify", "-c", SMOKE, "--checkpoint", run_dir / "checkpoint",
                  "--data", tracked_dir / "test.jsonl", "-o", tmp_path / "c.json")
    assert code == 6


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_default_config_keeps_reference_dimensions():
    run_cfg = load_run_config()
    assert run_cfg.model.hidden_dim == 256
    assert run_cfg.model.embed_dim == 256
    assert tuple(run_cfg.synth.levels) == DEFAULT_PYRAMID_LEVELS
    desk = load_run_config(CONFIG_DIR / "desk.yaml")
    assert desk.model.hidden_dim == 64
    assert tuple(desk.synth.levels) == (8, 4, 2, 1)
