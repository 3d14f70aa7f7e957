"""Sequence-level inference: box decoding and the online-template protocol.

``SequenceTracker`` owns template lifecycle (initial template from the
first frame, online template replaced at every ``update_interval`` boundary
with the interval's best-scoring candidate crop). Any object with the
``Predictor`` interface can drive it, which keeps the protocol testable
without a network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch

from .boxes import BBox, clamp_box, format_box_line
from .config import ModelConfig
from .crops import CropAffine, crop_region, crop_to_tensor
from .errors import DataError, NumericError
from .head import HeadOutput
from .model import CfbtModel


def decode_box(head: HeadOutput, affine: CropAffine,
               cosine_window: bool = False) -> tuple[BBox, float]:
    """Peak cell + its offset/size values -> frame-pixel box and raw score.

    Ties resolve to the lowest flat index. The optional cosine window biases
    peak selection toward the crop center; the returned score stays raw.
    """
    cls = head.cls_map[0, 0].detach().cpu().numpy().astype(np.float64)
    if not np.isfinite(cls).any():
        raise NumericError("classification map has no finite cells")
    s = cls.shape[0]
    selection = np.where(np.isfinite(cls), cls, -np.inf)
    if cosine_window:
        win = np.outer(np.hanning(s + 2)[1:-1], np.hanning(s + 2)[1:-1])
        selection = selection * win
    flat = int(np.argmax(selection))
    row, col = divmod(flat, s)
    score = float(cls[row, col])
    off = head.offset_map[0, :, row, col].detach().cpu().numpy()
    size = head.size_map[0, :, row, col].detach().cpu().numpy()
    cx = (col + float(off[0])) / s
    cy = (row + float(off[1])) / s
    w, h = float(size[0]), float(size[1])
    box_norm = BBox(cx - w / 2.0, cy - h / 2.0, w, h)
    return affine.norm_to_frame(box_norm), score


def encode_head_output(box_norm: BBox, grid_size: int, peak_value: float = 1.0
                       ) -> HeadOutput:
    """Synthesize the head maps that decode back to ``box_norm``; test utility."""
    s = grid_size
    col = min(int(box_norm.cx * s), s - 1)
    row = min(int(box_norm.cy * s), s - 1)
    cls = torch.zeros(1, 1, s, s)
    cls[0, 0, row, col] = peak_value
    offset = torch.zeros(1, 2, s, s)
    offset[0, 0, row, col] = box_norm.cx * s - col
    offset[0, 1, row, col] = box_norm.cy * s - row
    size = torch.full((1, 2, s, s), 0.5)
    size[0, 0, row, col] = box_norm.w
    size[0, 1, row, col] = box_norm.h
    return HeadOutput(cls, offset, size)


@dataclass
class TemplatePair:
    rgb: np.ndarray
    tir: np.ndarray


@dataclass
class IntervalBest:
    score: float
    crops: TemplatePair
    frame_index: int


@dataclass
class UpdateEvent:
    frame_index: int
    source_frame: int
    score: float


@dataclass
class TrackState:
    """Mutable per-sequence runtime state."""

    initial: TemplatePair
    online: TemplatePair
    last_box: BBox
    frame_index: int = 0
    interval_best: IntervalBest | None = None
    updates: list[UpdateEvent] = field(default_factory=list)


@dataclass
class TrackResult:
    boxes: list[BBox]
    scores: list[float]
    flagged: list[bool]
    updates: list[UpdateEvent]


class Predictor(Protocol):
    def locate(self, state: TrackState, rgb: np.ndarray, tir: np.ndarray
               ) -> tuple[BBox, float]: ...


class ModelPredictor:
    """Runs the network on one frame pair given the current track state."""

    def __init__(self, model: CfbtModel, device: str = "cpu"):
        self.model = model.eval()
        self.config = model.config
        self.device = device

    def _to_tensor(self, crop: np.ndarray) -> torch.Tensor:
        dtype = next(self.model.parameters()).dtype
        return crop_to_tensor(crop, dtype).unsqueeze(0).to(self.device)

    def template_tensors(self, pair: TemplatePair) -> tuple[torch.Tensor, torch.Tensor]:
        return self._to_tensor(pair.rgb), self._to_tensor(pair.tir)

    @torch.no_grad()
    def locate(self, state: TrackState, rgb: np.ndarray, tir: np.ndarray
               ) -> tuple[BBox, float]:
        cfg = self.config
        s_rgb, affine = crop_region(rgb, state.last_box, cfg.search_size,
                                    cfg.search_context)
        s_tir, _ = crop_region(tir, state.last_box, cfg.search_size,
                               cfg.search_context)
        ti_rgb, ti_tir = self.template_tensors(state.initial)
        to_rgb, to_tir = self.template_tensors(state.online)
        head = self.model(ti_rgb, ti_tir, to_rgb, to_tir,
                          self._to_tensor(s_rgb), self._to_tensor(s_tir))
        return decode_box(head, affine, cfg.cosine_window)


class OraclePredictor:
    """Echoes ground truth; validates the track/eval pipeline end to end."""

    def __init__(self, gt_boxes: Sequence[BBox]):
        self.gt_boxes = list(gt_boxes)
        self._cursor = 0

    def locate(self, state: TrackState, rgb, tir) -> tuple[BBox, float]:
        box = self.gt_boxes[min(self._cursor, len(self.gt_boxes) - 1)]
        self._cursor += 1
        if not box.is_valid():
            return state.last_box, 0.0
        return box, 1.0


class SequenceTracker:
    """Drives a predictor over a sequence and manages the online template."""

    def __init__(self, predictor: Predictor, config: ModelConfig):
        self.predictor = predictor
        self.config = config

    def _make_templates(self, rgb: np.ndarray, tir: np.ndarray, box: BBox
                        ) -> TemplatePair:
        cfg = self.config
        crop_rgb, _ = crop_region(rgb, box, cfg.template_size, cfg.template_context)
        crop_tir, _ = crop_region(tir, box, cfg.template_size, cfg.template_context)
        return TemplatePair(crop_rgb, crop_tir)

    def track(self, frames: Sequence[tuple[np.ndarray, np.ndarray]],
              init_box: BBox) -> TrackResult:
        if not frames:
            raise DataError("empty frame sequence")
        if not init_box.is_valid():
            raise DataError(f"invalid initial box {init_box.as_tuple()}")
        rgb0, tir0 = frames[0]
        initial = self._make_templates(rgb0, tir0, init_box)
        state = TrackState(initial=initial,
                           online=TemplatePair(initial.rgb.copy(), initial.tir.copy()),
                           last_box=init_box)
        result = TrackResult([], [], [], state.updates)
        for rgb, tir in frames:
            state.frame_index += 1
            box, score = self.predictor.locate(state, rgb, tir)
            finite = (math.isfinite(score)
                      and all(math.isfinite(v) for v in box.as_tuple()))
            if not finite:
                box, score = state.last_box, float("-inf")
            else:
                box = clamp_box(box, rgb.shape[1], rgb.shape[0])
            state.last_box = box
            result.boxes.append(box)
            result.scores.append(score if math.isfinite(score) else float("nan"))
            result.flagged.append(not finite)
            if finite and box.is_valid():
                if state.interval_best is None or score > state.interval_best.score:
                    state.interval_best = IntervalBest(
                        score, self._make_templates(rgb, tir, box), state.frame_index)
            if state.frame_index % self.config.update_interval == 0:
                if state.interval_best is not None:
                    state.online = state.interval_best.crops
                    state.updates.append(UpdateEvent(
                        state.frame_index, state.interval_best.frame_index,
                        state.interval_best.score))
                state.interval_best = None
        return result


def save_result_file(path, boxes: Sequence[BBox]) -> None:
    """One ``x,y,w,h`` line per frame, the dataset annotation format."""
    with open(path, "w", encoding="utf-8") as fh:
        for box in boxes:
            fh.write(format_box_line(box) + "\n")
