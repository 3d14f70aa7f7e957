"""Command-line surface: exit codes, pipeline round trip, artifacts."""

import json

import pytest

from cfbt.cli import main
from cfbt.config import ModelConfig, parse_kv_text


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> track(oracle) -> eval shared by several tests."""
    root = tmp_path_factory.mktemp("pipeline")
    synth_out = root / "synth"
    track_out = root / "track"
    eval_out = root / "eval"
    assert main(["synth", "--out", str(synth_out), "--seed", "3",
                 "--set", "count=2", "--set", "num_frames=20",
                 "--set", "frame_width=160", "--set", "frame_height=120",
                 "--set", "target_size=24", "--set", "distractors=1"]) == 0
    dataset = synth_out / "dataset"
    assert main(["track", "--out", str(track_out),
                 "--set", f"dataset={dataset}",
                 "--set", "tracker=oracle"]) == 0
    assert main(["eval", "--out", str(eval_out),
                 "--set", f"dataset={dataset}",
                 "--set", f"results={track_out}"]) == 0
    return {"root": root, "dataset": dataset, "track": track_out,
            "eval": eval_out, "synth": synth_out}


def test_oracle_pipeline_scores_perfectly(pipeline):
    text = (pipeline["eval"] / "report.txt").read_text()
    values = dict(l.split(" = ", 1) for l in text.splitlines()
                  if " = " in l and not l.startswith("#"))
    assert values["pr20"] == "1"
    assert values["sr"] == "1"
    assert values["msr"] == "1"
    assert values["frame_count"] == "40"


def test_track_writes_results_and_update_log(pipeline):
    results = sorted(p.name for p in pipeline["track"].glob("*.txt")
                     if p.name != "resolved_config.txt")
    assert results == ["synth_003.txt", "synth_004.txt"]
    boxes = (pipeline["track"] / "synth_003.txt").read_text().splitlines()
    assert len(boxes) == 20
    assert all(len(line.split(",")) == 4 for line in boxes)
    meta = json.loads((pipeline["track"] / "synth_003.updates.json").read_text())
    assert meta["frames"] == 20
    assert isinstance(meta["updates"], list)


def test_eval_emits_plots(pipeline):
    names = {p.name for p in pipeline["eval"].iterdir()}
    assert {"precision_curve.png", "norm_precision_curve.png",
            "success_curve.png", "report.txt"} <= names
    # synthetic data carries SA tags, so the radar renders too
    assert "attribute_radar.png" in names


def test_resolved_config_is_reloadable(pipeline, tmp_path, capsys):
    snapshot = pipeline["synth"] / "resolved_config.txt"
    mapping = parse_kv_text(snapshot.read_text())
    assert mapping["count"] == "2"
    assert mapping["num_frames"] == "20"
    # feeding the snapshot back reproduces the dataset byte-for-byte
    code, out, _ = _run(capsys, "synth", "--config", str(snapshot),
                        "--out", str(tmp_path / "again"))
    assert code == 0
    a = (pipeline["dataset"] / "synth_003" / "visible.txt").read_bytes()
    b = (tmp_path / "again" / "dataset" / "synth_003" / "visible.txt").read_bytes()
    assert a == b


def test_params_table(tmp_path, capsys):
    code, out, _ = _run(capsys, "params", "--out", str(tmp_path))
    assert code == 0
    assert "cstaf_cstcf" in out and "174,048" in out
    assert "fusion_fraction = 0.2858%" in out
    assert (tmp_path / "params.txt").exists()


def test_params_desk_preset(tmp_path, capsys):
    code, out, _ = _run(capsys, "params", "--out", str(tmp_path),
                        "--set", "preset=desk")
    assert code == 0
    assert "6,540" in out


def test_unknown_config_key_exits_1(tmp_path, capsys):
    code, _, err = _run(capsys, "synth", "--out", str(tmp_path),
                        "--set", "bogus_key=1")
    assert code == 1
    assert "usage error" in err


def test_bad_tracker_value_exits_1(pipeline, tmp_path, capsys):
    code, _, err = _run(capsys, "track", "--out", str(tmp_path),
                        "--set", f"dataset={pipeline['dataset']}",
                        "--set", "tracker=nonsense")
    assert code == 1
    assert "tracker" in err


def test_missing_dataset_exits_2(tmp_path, capsys):
    code, _, err = _run(capsys, "track", "--out", str(tmp_path),
                        "--set", "dataset=/nonexistent/path")
    assert code == 2
    assert "data error" in err


def test_missing_subcommand_exits_1(tmp_path, capsys):
    code, _, err = _run(capsys)
    assert code == 1


def test_eval_without_results_exits_1(pipeline, tmp_path, capsys):
    code, _, err = _run(capsys, "eval", "--out", str(tmp_path),
                        "--set", f"dataset={pipeline['dataset']}")
    assert code == 1
    assert "results" in err


def test_eval_result_count_mismatch_exits_2(pipeline, tmp_path, capsys):
    short = tmp_path / "short"
    short.mkdir()
    for name in ("synth_003", "synth_004"):
        (short / f"{name}.txt").write_text("1,2,3,4\n")
    code, _, err = _run(capsys, "eval", "--out", str(tmp_path / "out"),
                        "--set", f"dataset={pipeline['dataset']}",
                        "--set", f"results={short}")
    assert code == 2


def test_train_smoke_on_pipeline_data(pipeline, tmp_path, capsys):
    code, out, _ = _run(capsys, "train", "--out", str(tmp_path),
                        "--set", f"dataset={pipeline['dataset']}",
                        "--set", "batch_size=2", "--set", "max_steps=2",
                        "--set", "samples_per_epoch=4", "--set", "epochs=1",
                        "--set", "checkpoint_every=0")
    assert code == 0
    assert "steps = 2" in out
    assert (tmp_path / "checkpoint.pt").exists()
    assert (tmp_path / "train_log.jsonl").exists()
    snapshot = parse_kv_text((tmp_path / "resolved_config.txt").read_text())
    assert snapshot["batch_size"] == "2"
