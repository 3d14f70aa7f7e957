"""Training objective: Gaussian-weighted focal + GIoU + L1.

All pieces are differentiable torch ops; the box arguments are normalized
to the search crop (so every coordinate lives in [0, 1]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ContractViolation, DataError
from .head import HeadOutput

_EPS = 1e-6


@dataclass
class LossBreakdown:
    """Loss components; ``total`` is exactly l_cls + lambda1*l_iou + lambda2*l_1."""

    l_cls: torch.Tensor
    l_iou: torch.Tensor
    l_1: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float

    def detached(self) -> dict[str, float]:
        return {
            "l_cls": float(self.l_cls.detach()),
            "l_iou": float(self.l_iou.detach()),
            "l_1": float(self.l_1.detach()),
            "total": float(self.total.detach()),
        }


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Splat radius (in grid cells) keeping IoU >= min_overlap for shifted corners."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    sq1 = math.sqrt(max(b1 ** 2 - 4 * a1 * c1, 0.0))
    r1 = (b1 - sq1) / (2 * a1)

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    sq2 = math.sqrt(max(b2 ** 2 - 4 * a2 * c2, 0.0))
    r2 = (b2 - sq2) / (2 * a2)

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    sq3 = math.sqrt(max(b3 ** 2 - 4 * a3 * c3, 0.0))
    r3 = (b3 + sq3) / (2 * a3)
    return min(r1, r2, r3)


def gaussian_target(grid_size: int, gt_norm: torch.Tensor) -> torch.Tensor:
    """Build the (B, 1, s, s) heat map: a Gaussian per box with a unit peak.

    ``gt_norm`` is (B, 4) of (x, y, w, h) in crop-normalized units.
    """
    if gt_norm.dim() == 1:
        gt_norm = gt_norm.unsqueeze(0)
    b = gt_norm.shape[0]
    s = grid_size
    device, dtype = gt_norm.device, gt_norm.dtype
    ys = torch.arange(s, device=device, dtype=dtype).view(s, 1).expand(s, s)
    xs = torch.arange(s, device=device, dtype=dtype).view(1, s).expand(s, s)
    target = torch.zeros(b, 1, s, s, device=device, dtype=dtype)
    for idx in range(b):
        x, y, w, h = (float(v) for v in gt_norm[idx])
        col = min(int((x + w / 2) * s), s - 1)
        row = min(int((y + h / 2) * s), s - 1)
        radius = max(0.0, gaussian_radius(h * s, w * s))
        sigma = (2 * radius + 1) / 6.0
        g = torch.exp(-((xs - col) ** 2 + (ys - row) ** 2) / (2 * sigma ** 2))
        target[idx, 0] = torch.maximum(target[idx, 0], g)
        target[idx, 0, row, col] = 1.0
    return target


def focal_loss(cls_map: torch.Tensor, target_map: torch.Tensor,
               alpha: float = 2.0, beta: float = 4.0) -> torch.Tensor:
    """Gaussian-weighted focal loss, normalized by the number of unit peaks."""
    if cls_map.shape != target_map.shape:
        raise ContractViolation(
            f"shape mismatch: {tuple(cls_map.shape)} vs {tuple(target_map.shape)}")
    pos_mask = target_map == 1.0
    flat = pos_mask.reshape(pos_mask.shape[0], -1)
    if not bool(flat.any(dim=1).all()):
        raise ContractViolation("every target map needs exactly one unit peak")
    p = cls_map.clamp(_EPS, 1.0 - _EPS)
    pos_term = ((1 - p) ** alpha) * torch.log(p)
    neg_term = ((1 - target_map) ** beta) * (p ** alpha) * torch.log(1 - p)
    loss = torch.where(pos_mask, pos_term, neg_term)
    num_pos = pos_mask.sum().to(cls_map.dtype)
    return -loss.sum() / num_pos


def _giou_xywh(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Differentiable GIoU over (..., 4) xywh tensors."""
    px1, py1 = pred[..., 0], pred[..., 1]
    px2, py2 = px1 + pred[..., 2], py1 + pred[..., 3]
    gx1, gy1 = gt[..., 0], gt[..., 1]
    gx2, gy2 = gx1 + gt[..., 2], gy1 + gt[..., 3]
    iw = (torch.minimum(px2, gx2) - torch.maximum(px1, gx1)).clamp(min=0)
    ih = (torch.minimum(py2, gy2) - torch.maximum(py1, gy1)).clamp(min=0)
    inter = iw * ih
    union = pred[..., 2] * pred[..., 3] + gt[..., 2] * gt[..., 3] - inter
    hull = ((torch.maximum(px2, gx2) - torch.minimum(px1, gx1))
            * (torch.maximum(py2, gy2) - torch.minimum(py1, gy1)))
    iou = inter / union.clamp(min=_EPS)
    return iou - (hull - union) / hull.clamp(min=_EPS)


def giou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """1 - GIoU, averaged over the batch. Boxes are (..., 4) xywh."""
    pred_t = torch.as_tensor(pred)
    gt_t = torch.as_tensor(gt)
    if bool((pred_t[..., 2:] <= 0).any()) or bool((gt_t[..., 2:] <= 0).any()):
        raise DataError("degenerate box (nonpositive width or height)")
    return (1.0 - _giou_xywh(pred_t, gt_t)).mean()


def boxes_at_peak(head: HeadOutput, gt_norm: torch.Tensor
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    """Predicted xywh at each sample's ground-truth cell, plus that cell's flat index."""
    if gt_norm.dim() == 1:
        gt_norm = gt_norm.unsqueeze(0)
    b = gt_norm.shape[0]
    s = head.grid_size
    cx = gt_norm[:, 0] + gt_norm[:, 2] / 2
    cy = gt_norm[:, 1] + gt_norm[:, 3] / 2
    col = (cx * s).long().clamp(0, s - 1)
    row = (cy * s).long().clamp(0, s - 1)
    batch_idx = torch.arange(b, device=gt_norm.device)
    off = head.offset_map[batch_idx, :, row, col]        # (B, 2)
    size = head.size_map[batch_idx, :, row, col]         # (B, 2)
    pred_cx = (col.to(off.dtype) + off[:, 0]) / s
    pred_cy = (row.to(off.dtype) + off[:, 1]) / s
    pred = torch.stack([pred_cx - size[:, 0] / 2, pred_cy - size[:, 1] / 2,
                        size[:, 0], size[:, 1]], dim=1)
    return pred, row * s + col


def total_loss(head: HeadOutput, gt_norm: torch.Tensor,
               lambda1: float, lambda2: float) -> LossBreakdown:
    """Assemble the full objective for a batch of crop-normalized gt boxes."""
    gt = torch.as_tensor(gt_norm, dtype=head.cls_map.dtype, device=head.cls_map.device)
    if gt.dim() == 1:
        gt = gt.unsqueeze(0)
    if bool((gt[:, 2] <= 0).any()) or bool((gt[:, 3] <= 0).any()):
        raise DataError("degenerate ground-truth box")
    outside = (gt[:, 0] < -_EPS) | (gt[:, 1] < -_EPS) \
        | (gt[:, 0] + gt[:, 2] > 1 + _EPS) | (gt[:, 1] + gt[:, 3] > 1 + _EPS)
    if bool(outside.any()):
        raise DataError("ground-truth box falls outside the search crop")
    target = gaussian_target(head.grid_size, gt)
    l_cls = focal_loss(head.cls_map, target)
    pred_boxes, _ = boxes_at_peak(head, gt)
    l_iou = (1.0 - _giou_xywh(pred_boxes, gt)).mean()
    pred_cs = torch.stack([pred_boxes[:, 0] + pred_boxes[:, 2] / 2,
                           pred_boxes[:, 1] + pred_boxes[:, 3] / 2,
                           pred_boxes[:, 2], pred_boxes[:, 3]], dim=1)
    gt_cs = torch.stack([gt[:, 0] + gt[:, 2] / 2, gt[:, 1] + gt[:, 3] / 2,
                         gt[:, 2], gt[:, 3]], dim=1)
    l_1 = (pred_cs - gt_cs).abs().mean()
    total = l_cls + lambda1 * l_iou + lambda2 * l_1
    return LossBreakdown(l_cls, l_iou, l_1, total, lambda1, lambda2)
