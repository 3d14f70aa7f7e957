"""Axis-aligned boxes in ``(x, y, w, h)`` form and overlap geometry."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError


@dataclass(frozen=True)
class BBox:
    """Top-left corner plus size, in pixels or normalized units."""

    x: float
    y: float
    w: float
    h: float

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def is_valid(self) -> bool:
        return self.w > 0 and self.h > 0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    @staticmethod
    def from_center(cx: float, cy: float, w: float, h: float) -> "BBox":
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


def parse_box_line(line: str) -> BBox:
    """Parse an ``x,y,w,h`` annotation line (commas, tabs or spaces)."""
    parts = line.replace(",", " ").replace("\t", " ").split()
    if len(parts) != 4:
        raise DataError(f"expected 4 fields in annotation line, got {line!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError:
        raise DataError(f"non-numeric annotation line {line!r}") from None
    return BBox(x, y, w, h)


def clamp_box(box: BBox, frame_w: float, frame_h: float,
              min_size: float = 2.0) -> BBox:
    """Keep a predicted box usable: size within the frame, center inside it."""
    w = min(max(box.w, min_size), frame_w)
    h = min(max(box.h, min_size), frame_h)
    cx = min(max(box.cx, 0.0), frame_w)
    cy = min(max(box.cy, 0.0), frame_h)
    return BBox.from_center(cx, cy, w, h)


def format_box_line(box: BBox) -> str:
    def fmt(v: float) -> str:
        return str(int(v)) if float(v).is_integer() else f"{v:.2f}"
    return ",".join(fmt(v) for v in box.as_tuple())


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for degenerate operands."""
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        return 0.0
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in [-1, 1]: IoU minus the relative hull slack."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    hull_w = max(a.x2, b.x2) - min(a.x, b.x)
    hull_h = max(a.y2, b.y2) - min(a.y, b.y)
    hull = hull_w * hull_h
    iou_val = inter / union if union > 0 else 0.0
    if hull <= 0:
        return iou_val
    return iou_val - (hull - union) / hull


def center_error(a: BBox, b: BBox) -> float:
    return ((a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2) ** 0.5


def normalized_center_error(pred: BBox, gt: BBox) -> float:
    """Center error with each axis scaled by the ground-truth box size."""
    dx = (pred.cx - gt.cx) / max(gt.w, 1e-12)
    dy = (pred.cy - gt.cy) / max(gt.h, 1e-12)
    return (dx * dx + dy * dy) ** 0.5
