"""Square context crops around a box, with the affine record to map back."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch

from .boxes import BBox
from .errors import DataError


@dataclass(frozen=True)
class CropAffine:
    """Geometry of one crop: frame-pixel origin, side, and output resolution."""

    x0: float
    y0: float
    side: float
    out_size: int
    all_padding: bool = False

    def norm_to_frame(self, box_norm: BBox) -> BBox:
        """Map a crop-normalized box (coords in [0, 1]) to frame pixels."""
        return BBox(self.x0 + box_norm.x * self.side,
                    self.y0 + box_norm.y * self.side,
                    box_norm.w * self.side,
                    box_norm.h * self.side)

    def frame_to_norm(self, box: BBox) -> BBox:
        return BBox((box.x - self.x0) / self.side,
                    (box.y - self.y0) / self.side,
                    box.w / self.side,
                    box.h / self.side)


def crop_region(frame: np.ndarray, box: BBox, out_size: int,
                context_factor: float) -> tuple[np.ndarray, CropAffine]:
    """Cut a square ``context_factor * sqrt(w*h)`` region centered on ``box``.

    Out-of-frame areas are filled with the frame's per-channel mean; the
    result is resized to ``out_size`` x ``out_size``.
    """
    if frame is None or frame.size == 0:
        raise DataError("empty frame")
    if box.w <= 0 or box.h <= 0:
        raise DataError(f"degenerate box {box.as_tuple()}")
    fh, fw = frame.shape[:2]
    side = max(2, int(round(context_factor * (box.w * box.h) ** 0.5)))
    x0 = int(round(box.cx - side / 2.0))
    y0 = int(round(box.cy - side / 2.0))

    channels = frame.shape[2] if frame.ndim == 3 else 1
    mean = frame.reshape(-1, channels).mean(axis=0)
    patch = np.empty((side, side, channels) if frame.ndim == 3 else (side, side),
                     dtype=frame.dtype)
    patch[...] = mean.astype(frame.dtype) if frame.ndim == 3 else frame.dtype.type(mean[0])

    src_x1, src_y1 = max(x0, 0), max(y0, 0)
    src_x2, src_y2 = min(x0 + side, fw), min(y0 + side, fh)
    all_padding = src_x1 >= src_x2 or src_y1 >= src_y2
    if not all_padding:
        patch[src_y1 - y0: src_y2 - y0, src_x1 - x0: src_x2 - x0] = \
            frame[src_y1:src_y2, src_x1:src_x2]
    resized = cv2.resize(patch, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    return resized, CropAffine(float(x0), float(y0), float(side), out_size, all_padding)


def crop_to_tensor(crop: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """uint8 HxWx3 crop -> normalized (3, H, W) tensor in [-1, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(crop)).to(dtype)
    t = t.permute(2, 0, 1) / 255.0
    return (t - 0.5) / 0.5
