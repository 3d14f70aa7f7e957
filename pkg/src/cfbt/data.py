"""Ingestion of RGB-T sequence directories.

Expected layout per sequence::

    <root>/<name>/visible/    frame images (sorted by filename)
    <root>/<name>/infrared/   frame images, same count
    <root>/<name>/visible.txt / infrared.txt   per-modality x,y,w,h lines

A single ``groundtruth_rect.txt`` / ``groundtruth.txt`` / ``init.txt``
serves both modalities when the per-modality files are absent. Optional
``attributes.txt`` (sequence tags) and ``frame_attributes.txt`` (one
comma-separated tag list per frame) feed attribute-sliced evaluation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .boxes import BBox, parse_box_line
from .errors import DataError


class AnnotationError(DataError):
    """Malformed annotation content; never silently skipped."""


_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}
_SHARED_GT_NAMES = ("groundtruth_rect.txt", "groundtruth.txt", "init.txt")


@dataclass
class RgbtSequence:
    """One aligned RGB/TIR sequence with per-modality ground truth."""

    name: str
    rgb_paths: list[str]
    tir_paths: list[str]
    gt_rgb: list[BBox]
    gt_tir: list[BBox]
    attributes: set[str] = field(default_factory=set)
    frame_attributes: list[set[str]] | None = None

    def __len__(self) -> int:
        return len(self.rgb_paths)

    def load_frame(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        rgb = cv2.imread(self.rgb_paths[index], cv2.IMREAD_COLOR)
        tir = cv2.imread(self.tir_paths[index], cv2.IMREAD_COLOR)
        if rgb is None or tir is None:
            raise DataError(f"unreadable frame {index} in sequence {self.name!r}")
        return rgb, tir

    def frames(self):
        for i in range(len(self)):
            yield self.load_frame(i)


@dataclass
class LoadReport:
    sequences: list[RgbtSequence]
    skipped: list[tuple[str, str]]


def load_annotation_file(path: Path) -> list[BBox]:
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                boxes.append(parse_box_line(line))
            except DataError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
    return boxes


def _frame_files(folder: Path) -> list[str]:
    files = [str(folder / f) for f in sorted(os.listdir(folder))
             if Path(f).suffix.lower() in _IMAGE_EXTS]
    return files


def _read_tags(path: Path) -> set[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return {t for t in fh.read().replace(",", " ").split() if t}


def _load_sequence(seq_dir: Path) -> RgbtSequence:
    vis_dir = seq_dir / "visible"
    tir_dir = seq_dir / "infrared"
    for d in (vis_dir, tir_dir):
        if not d.is_dir():
            raise DataError(f"missing modality folder {d.name!r}")
    rgb_paths = _frame_files(vis_dir)
    tir_paths = _frame_files(tir_dir)
    if not rgb_paths:
        raise DataError("no visible frames")
    if len(rgb_paths) != len(tir_paths):
        raise DataError(
            f"frame count mismatch: visible {len(rgb_paths)} vs infrared {len(tir_paths)}")

    vis_gt_path = seq_dir / "visible.txt"
    tir_gt_path = seq_dir / "infrared.txt"
    if vis_gt_path.exists() or tir_gt_path.exists():
        shared = vis_gt_path if vis_gt_path.exists() else tir_gt_path
        gt_rgb = load_annotation_file(vis_gt_path if vis_gt_path.exists() else shared)
        gt_tir = load_annotation_file(tir_gt_path if tir_gt_path.exists() else shared)
    else:
        shared = next((seq_dir / n for n in _SHARED_GT_NAMES
                       if (seq_dir / n).exists()), None)
        if shared is None:
            raise DataError("no annotation file found")
        gt_rgb = load_annotation_file(shared)
        gt_tir = list(gt_rgb)
    for label, gt in (("visible", gt_rgb), ("infrared", gt_tir)):
        if len(gt) != len(rgb_paths):
            raise DataError(
                f"{label} annotation count {len(gt)} != frame count {len(rgb_paths)}")

    attributes: set[str] = set()
    attr_path = seq_dir / "attributes.txt"
    if attr_path.exists():
        attributes = _read_tags(attr_path)
    frame_attrs = None
    fa_path = seq_dir / "frame_attributes.txt"
    if fa_path.exists():
        with open(fa_path, "r", encoding="utf-8") as fh:
            frame_attrs = [{t for t in line.replace(",", " ").split() if t}
                           for line in fh.read().splitlines()]
        if len(frame_attrs) != len(rgb_paths):
            raise DataError(
                f"frame_attributes count {len(frame_attrs)} != frame count {len(rgb_paths)}")
    return RgbtSequence(seq_dir.name, rgb_paths, tir_paths, gt_rgb, gt_tir,
                        attributes, frame_attrs)


def load_dataset(root) -> LoadReport:
    """Load every sequence directory under ``root``.

    Structural problems (missing folder, count mismatch) skip the sequence
    and land in the report; malformed annotation lines raise.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    sequences: list[RgbtSequence] = []
    skipped: list[tuple[str, str]] = []
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        try:
            sequences.append(_load_sequence(entry))
        except AnnotationError:
            raise
        except DataError as exc:
            skipped.append((entry.name, str(exc)))
    return LoadReport(sequences, skipped)
