"""Report rendering: text format, file artifacts, determinism."""

import numpy as np
import pytest

from cfbt.boxes import BBox
from cfbt.errors import DataError
from cfbt.metrics import RADAR_OMITTED, compute_metrics
from cfbt.plots import emit_plots, format_report


def _report(with_tags=False):
    gt = [BBox(0, 0, 20, 20)] * 4
    pred = [BBox(0, 0, 20, 20), BBox(0, 0, 20, 20),
            BBox(5, 0, 20, 20), BBox(200, 200, 20, 20)]
    tags = [{"HO"}, {"SA"}, {"HO"}, set()] if with_tags else None
    return compute_metrics(pred, gt, frame_attributes=tags)


def test_format_report_key_value_lines():
    text = format_report(_report())
    lines = dict(l.split(" = ", 1) for l in text.splitlines()
                 if " = " in l and not l.startswith("#"))
    assert lines["frame_count"] == "4"
    assert lines["pr20"] == "0.75"
    assert float(lines["sr"]) == pytest.approx(0.7, abs=0.2)
    curve = [float(v) for v in lines["success_curve"].split(",")]
    assert len(curve) == 101
    assert lines["radar"] == RADAR_OMITTED


def test_format_report_six_significant_digits():
    gt = [BBox(0, 0, 30, 30)] * 3
    pred = [BBox(0, 0, 30, 30), BBox(0, 0, 30, 30), BBox(500, 500, 30, 30)]
    text = format_report(compute_metrics(pred, gt))
    assert "pr20 = 0.666667" in text
    assert "sr = " in text


def test_attribute_lines_and_radar_metric():
    text = format_report(_report(with_tags=True))
    assert "radar_metric = sr" in text
    assert "attr.HO.frame_count = 2" in text
    assert "attr.SA.pr20 = 1" in text
    assert RADAR_OMITTED not in text


def test_emit_plots_writes_expected_files(tmp_path):
    written = emit_plots(_report(with_tags=True), tmp_path)
    names = {p.rsplit("/", 1)[-1] for p in written}
    assert names == {"precision_curve.png", "norm_precision_curve.png",
                     "success_curve.png", "attribute_radar.png", "report.txt"}
    for p in written:
        assert (tmp_path / p.rsplit("/", 1)[-1]).stat().st_size > 0


def test_emit_plots_skips_radar_without_tags(tmp_path):
    written = emit_plots(_report(), tmp_path)
    names = {p.rsplit("/", 1)[-1] for p in written}
    assert "attribute_radar.png" not in names
    report_text = (tmp_path / "report.txt").read_text()
    assert RADAR_OMITTED in report_text


def test_emit_plots_deterministic_bytes(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    emit_plots(_report(with_tags=True), a)
    emit_plots(_report(with_tags=True), b)
    for name in ("precision_curve.png", "success_curve.png",
                 "attribute_radar.png", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_emit_plots_unwritable_target_raises(tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("file, not a directory")
    with pytest.raises(DataError):
        emit_plots(_report(), blocker)
