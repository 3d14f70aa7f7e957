"""Render metric curves / attribute radar to files plus a key = value report."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import DataError
from .metrics import (
    NORM_PRECISION_THRESHOLDS,
    PRECISION_THRESHOLDS,
    RADAR_OMITTED,
    SUCCESS_THRESHOLDS,
    MetricReport,
)

_RADAR_METRIC = "sr"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _curve_line(values) -> str:
    return ",".join(f"{v:.6g}" for v in values)


def format_report(report: MetricReport) -> str:
    """Key = value text carrying every number the plots show."""
    lines = [
        "# tracking evaluation report",
        "# conventions: pr/npr at 20px/0.2 (toolkit defaults); "
        "mpr/msr take the per-frame best of both annotations",
        f"frame_count = {report.frame_count}",
        f"pr20 = {_fmt(report.pr20)}",
        f"npr = {_fmt(report.npr)}",
        f"sr = {_fmt(report.sr)}",
        f"mpr20 = {_fmt(report.mpr20)}",
        f"msr = {_fmt(report.msr)}",
        f"precision_curve = {_curve_line(report.precision_curve)}",
        f"norm_precision_curve = {_curve_line(report.norm_precision_curve)}",
        f"success_curve = {_curve_line(report.success_curve)}",
        f"max_precision_curve = {_curve_line(report.max_precision_curve)}",
        f"max_success_curve = {_curve_line(report.max_success_curve)}",
    ]
    if report.attributes:
        lines.append(f"radar_metric = {_RADAR_METRIC}")
        for tag in sorted(report.attributes):
            sub = report.attributes[tag]
            lines.append(f"attr.{tag}.frame_count = {sub.frame_count}")
            for name in ("pr20", "npr", "sr", "mpr20", "msr"):
                lines.append(f"attr.{tag}.{name} = {_fmt(getattr(sub, name))}")
    else:
        lines.append(f"radar = {RADAR_OMITTED}")
    return "\n".join(lines) + "\n"


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_curves(path: Path, xs, series: dict[str, object], xlabel: str,
                 ylabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    _save(fig, path)


def _plot_radar(path: Path, report: MetricReport) -> None:
    tags = sorted(report.attributes)
    values = [getattr(report.attributes[t], _RADAR_METRIC) for t in tags]
    angles = [2 * math.pi * i / len(tags) for i in range(len(tags))]
    angles.append(angles[0])
    values.append(values[0])
    fig, ax = plt.subplots(figsize=(5, 5), subplot_kw={"projection": "polar"})
    ax.plot(angles, values)
    ax.fill(angles, values, alpha=0.25)
    ax.set_xticks(angles[:-1])
    ax.set_xticklabels(tags)
    ax.set_ylim(0, 1)
    ax.set_title(f"per-attribute {_RADAR_METRIC}")
    fig.tight_layout()
    _save(fig, path)


def emit_plots(report: MetricReport, out_dir) -> list[str]:
    """Write curve images, the optional radar, and report.txt; returns paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written: list[str] = []

        precision_png = out / "precision_curve.png"
        _plot_curves(precision_png, PRECISION_THRESHOLDS,
                     {f"precision (pr20={report.pr20:.3f})": report.precision_curve,
                      f"max precision (mpr20={report.mpr20:.3f})":
                          report.max_precision_curve},
                     "center error threshold (px)", "precision",
                     "precision over center-error thresholds")
        written.append(str(precision_png))

        norm_png = out / "norm_precision_curve.png"
        _plot_curves(norm_png, NORM_PRECISION_THRESHOLDS,
                     {f"normalized precision (npr={report.npr:.3f})":
                          report.norm_precision_curve},
                     "normalized center error threshold", "precision",
                     "normalized precision")
        written.append(str(norm_png))

        success_png = out / "success_curve.png"
        _plot_curves(success_png, SUCCESS_THRESHOLDS,
                     {f"success (sr={report.sr:.3f})": report.success_curve,
                      f"max success (msr={report.msr:.3f})":
                          report.max_success_curve},
                     "overlap threshold", "success rate",
                     "success over overlap thresholds")
        written.append(str(success_png))

        if report.attributes:
            radar_png = out / "attribute_radar.png"
            _plot_radar(radar_png, report)
            written.append(str(radar_png))

        report_txt = out / "report.txt"
        report_txt.write_text(format_report(report), encoding="utf-8")
        written.append(str(report_txt))
        return written
    except OSError as exc:
        raise DataError(f"cannot write evaluation artifacts to {out}: {exc}") from exc
