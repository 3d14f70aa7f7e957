"""Fully convolutional prediction head over the fused search tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError


@dataclass
class HeadOutput:
    """Per-cell target maps on the (search_size / patch_size)^2 grid.

    cls_map: (B, 1, s, s) classification scores in [0, 1].
    offset_map: (B, 2, s, s) sub-cell (x, y) center offsets in (0, 1).
    size_map: (B, 2, s, s) box (w, h) normalized to the search crop, in (0, 1).
    """

    cls_map: torch.Tensor
    offset_map: torch.Tensor
    size_map: torch.Tensor

    @property
    def grid_size(self) -> int:
        return self.cls_map.shape[-1]


def _branch(dim: int, width: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(dim, width, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(width, width, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(width, out_channels, kernel_size=1),
    )


class PredictionHead(nn.Module):
    """Three small conv stacks: classification, center offset, box size."""

    def __init__(self, dim: int, width: int = 64):
        super().__init__()
        self.cls_branch = _branch(dim, width, 1)
        self.offset_branch = _branch(dim, width, 2)
        self.size_branch = _branch(dim, width, 2)

    def forward(self, search_tokens: torch.Tensor) -> HeadOutput:
        if search_tokens.dim() != 3:
            raise ConfigurationError(
                f"expected (B, N, D) search tokens, got {tuple(search_tokens.shape)}")
        b, n, d = search_tokens.shape
        side = int(math.isqrt(n))
        if side * side != n:
            raise ConfigurationError(f"search token count {n} is not a perfect square")
        grid = search_tokens.transpose(1, 2).reshape(b, d, side, side)
        cls_map = torch.sigmoid(self.cls_branch(grid))
        offset_map = torch.sigmoid(self.offset_branch(grid))
        size_map = torch.sigmoid(self.size_branch(grid))
        return HeadOutput(cls_map, offset_map, size_map)
