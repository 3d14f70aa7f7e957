"""Tracking benchmark metrics: precision / success curves and their summaries.

Conventions (toolkit-standard, since metric names alone do not pin them down):

* precision(t) = fraction of frames with center error <= t, t = 0..50 px;
  the headline precision rate is read at 20 px.
* normalized precision scales the center error per-axis by the ground-truth
  box size, thresholds 0..0.5 step 0.01, read at 0.2.
* success(t) = fraction of frames with overlap >= t for t > 0 and overlap > 0
  at t = 0, over 101 thresholds in [0, 1]; the success rate is the plain mean
  of the curve samples.
* mpr/msr score every frame against both modalities' annotations and keep the
  more favorable one before thresholding.
* frames whose ground truth has w = h = 0 are excluded from all denominators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import BBox, center_error, iou, normalized_center_error
from .errors import DataError

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64) / 100.0
SUCCESS_THRESHOLDS = np.arange(101, dtype=np.float64) / 100.0
PR_INDEX = 20   # 20 px
NPR_INDEX = 20  # 0.2
RADAR_OMITTED = "omitted_no_attributes"


def overlap(pred: BBox, gt: BBox) -> float:
    """Intersection-over-union of two boxes."""
    return iou(pred, gt)


@dataclass
class MetricReport:
    """Curves plus headline numbers for one evaluated frame set."""

    precision_curve: np.ndarray
    norm_precision_curve: np.ndarray
    success_curve: np.ndarray
    max_precision_curve: np.ndarray
    max_success_curve: np.ndarray
    pr20: float
    npr: float
    sr: float
    mpr20: float
    msr: float
    frame_count: int
    attributes: dict[str, "MetricReport"] = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("pr20", "npr", "sr", "mpr20", "msr"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name}={value} outside [0, 1]")
        if abs(self.sr - float(np.mean(self.success_curve))) > 1e-12:
            raise DataError("sr does not equal the mean of the success curve")


def _precision_curve(errors: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    if errors.size == 0:
        return np.zeros_like(thresholds)
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def _success_curve(overlaps: np.ndarray) -> np.ndarray:
    if overlaps.size == 0:
        return np.zeros_like(SUCCESS_THRESHOLDS)
    curve = (overlaps[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    curve[0] = (overlaps > 0).mean()
    return curve


def _is_evaluated(gt: BBox) -> bool:
    return not (gt.w == 0 and gt.h == 0)


def compute_metrics(pred: list[BBox], gt_rgb: list[BBox],
                    gt_tir: list[BBox] | None = None,
                    frame_attributes: list[set[str]] | None = None,
                    _slice_attributes: bool = True) -> MetricReport:
    """Score predictions against per-modality ground truth.

    ``gt_rgb`` drives the single-annotation metrics; ``gt_tir`` (defaulting to
    ``gt_rgb``) only contributes the per-frame best measurement behind
    mpr/msr. ``frame_attributes`` tags each frame with challenge labels and
    produces one sub-report per label.
    """
    if gt_tir is None:
        gt_tir = gt_rgb
    if not len(pred) == len(gt_rgb) == len(gt_tir):
        raise DataError(
            f"length mismatch: {len(pred)} predictions, {len(gt_rgb)} rgb gt, "
            f"{len(gt_tir)} tir gt")
    if frame_attributes is not None and len(frame_attributes) != len(pred):
        raise DataError("frame_attributes length mismatch")

    errors, norm_errors, overlaps = [], [], []
    best_errors, best_overlaps = [], []
    kept_tags: list[set[str]] = []
    for i, (p, g_rgb, g_tir) in enumerate(zip(pred, gt_rgb, gt_tir)):
        if not _is_evaluated(g_rgb):
            continue
        errors.append(center_error(p, g_rgb))
        norm_errors.append(normalized_center_error(p, g_rgb))
        overlaps.append(iou(p, g_rgb))
        candidates = [g_rgb] + ([g_tir] if _is_evaluated(g_tir) else [])
        best_errors.append(min(center_error(p, g) for g in candidates))
        best_overlaps.append(max(iou(p, g) for g in candidates))
        if frame_attributes is not None:
            kept_tags.append(set(frame_attributes[i]))

    errors = np.asarray(errors, dtype=np.float64)
    norm_errors = np.asarray(norm_errors, dtype=np.float64)
    overlaps = np.asarray(overlaps, dtype=np.float64)
    precision = _precision_curve(errors, PRECISION_THRESHOLDS)
    norm_precision = _precision_curve(norm_errors, NORM_PRECISION_THRESHOLDS)
    success = _success_curve(overlaps)
    max_precision = _precision_curve(np.asarray(best_errors, dtype=np.float64),
                                     PRECISION_THRESHOLDS)
    max_success = _success_curve(np.asarray(best_overlaps, dtype=np.float64))

    report = MetricReport(
        precision_curve=precision,
        norm_precision_curve=norm_precision,
        success_curve=success,
        max_precision_curve=max_precision,
        max_success_curve=max_success,
        pr20=float(precision[PR_INDEX]),
        npr=float(norm_precision[NPR_INDEX]),
        sr=float(success.mean()),
        mpr20=float(max_precision[PR_INDEX]),
        msr=float(max_success.mean()),
        frame_count=int(errors.size),
    )

    if frame_attributes is not None and _slice_attributes:
        tags = sorted(set().union(*kept_tags)) if kept_tags else []
        for tag in tags:
            idx = [i for i, (p, g) in enumerate(zip(pred, gt_rgb))
                   if frame_attributes[i] and tag in frame_attributes[i]]
            report.attributes[tag] = compute_metrics(
                [pred[i] for i in idx], [gt_rgb[i] for i in idx],
                [gt_tir[i] for i in idx], None, _slice_attributes=False)
    report.validate()
    return report


def concatenate_frames(per_sequence: list[tuple[list[BBox], list[BBox], list[BBox],
                                                list[set[str]] | None]]
                       ) -> tuple[list[BBox], list[BBox], list[BBox], list[set[str]]]:
    """Merge per-sequence (pred, gt_rgb, gt_tir, tags) into one frame list."""
    pred: list[BBox] = []
    gt_rgb: list[BBox] = []
    gt_tir: list[BBox] = []
    tags: list[set[str]] = []
    for p, gr, gt, t in per_sequence:
        if not len(p) == len(gr) == len(gt):
            raise DataError("per-sequence length mismatch")
        pred.extend(p)
        gt_rgb.extend(gr)
        gt_tir.extend(gt)
        tags.extend(t if t is not None else [set() for _ in p])
    return pred, gt_rgb, gt_tir, tags
