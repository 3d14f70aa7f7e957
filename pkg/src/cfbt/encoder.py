"""Patch embedding and the shared transformer encoder layer.

Both branches (initial / online template) and both modalities (RGB / TIR)
run through the same encoder weights; the model module owns that sharing,
this module owns the single-stream building blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import ConfigurationError, NumericError, ShapeError

BRANCHES = ("initial", "online")
MODALITIES = ("rgb", "tir")


@dataclass
class TokenSequence:
    """Token matrix for one (branch, modality) stream.

    ``tokens`` is (B, n_template + n_search, D); template rows always come
    first, which the split/concat fusion ops rely on.
    """

    tokens: torch.Tensor
    n_template: int
    n_search: int
    branch: str
    modality: str

    def __post_init__(self) -> None:
        if self.branch not in BRANCHES:
            raise ShapeError(f"unknown branch {self.branch!r}")
        if self.modality not in MODALITIES:
            raise ShapeError(f"unknown modality {self.modality!r}")
        if self.tokens.dim() != 3:
            raise ShapeError(f"tokens must be (B, N, D), got {tuple(self.tokens.shape)}")
        if self.tokens.shape[1] != self.n_template + self.n_search:
            raise ShapeError(
                f"row count {self.tokens.shape[1]} != n_template {self.n_template}"
                f" + n_search {self.n_search}")

    def template_rows(self) -> torch.Tensor:
        return self.tokens[:, : self.n_template]

    def search_rows(self) -> torch.Tensor:
        return self.tokens[:, self.n_template:]

    def with_tokens(self, tokens: torch.Tensor) -> "TokenSequence":
        return TokenSequence(tokens, self.n_template, self.n_search, self.branch, self.modality)


def assemble_branch_input(template_tokens: torch.Tensor, search_tokens: torch.Tensor,
                          branch: str, modality: str) -> TokenSequence:
    """Concatenate [template; search] tokens into one stream."""
    if template_tokens.dim() != 3 or search_tokens.dim() != 3:
        raise ShapeError("token blocks must be (B, N, D)")
    if template_tokens.shape[1] == 0 or search_tokens.shape[1] == 0:
        raise ShapeError("empty token block")
    if template_tokens.shape[0] != search_tokens.shape[0]:
        raise ShapeError("batch size mismatch between template and search tokens")
    if template_tokens.shape[2] != search_tokens.shape[2]:
        raise ShapeError(
            f"width mismatch: template D={template_tokens.shape[2]},"
            f" search D={search_tokens.shape[2]}")
    tokens = torch.cat([template_tokens, search_tokens], dim=1)
    return TokenSequence(tokens, template_tokens.shape[1], search_tokens.shape[1],
                         branch, modality)


class PatchEmbed(nn.Module):
    """Non-overlapping patch projection plus a role-specific position table."""

    def __init__(self, config: ModelConfig, role: str):
        super().__init__()
        if role not in ("template", "search"):
            raise ConfigurationError(f"role must be template or search, got {role!r}")
        self.role = role
        self.patch_size = config.patch_size
        self.image_size = config.template_size if role == "template" else config.search_size
        n_tokens = (self.image_size // self.patch_size) ** 2
        self.proj = nn.Conv2d(3, config.embed_dim, kernel_size=self.patch_size,
                              stride=self.patch_size)
        self.pos = nn.Parameter(torch.zeros(1, n_tokens, config.embed_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        b, c, h, w = image.shape
        if c != 3 or h != self.image_size or w != self.image_size:
            raise ConfigurationError(
                f"{self.role} image must be (B, 3, {self.image_size}, {self.image_size}),"
                f" got {tuple(image.shape)}")
        x = self.proj(image)                      # (B, D, H/P, W/P)
        x = x.flatten(2).transpose(1, 2)          # (B, N, D)
        return x + self.pos


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention over the full token sequence."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise NumericError("non-finite attention input")
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)      # each (B, H, N, d_h)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    """Token-wise two-layer feed-forward with 4x expansion."""

    def __init__(self, dim: int, ratio: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class EncoderLayer(nn.Module):
    """Pre-norm transformer block, exposed as two residual-free updates.

    The dual-stream model adds the residuals itself because cross-modal and
    cross-branch terms join the same residual sums.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim)

    def attention_update(self, x: torch.Tensor) -> torch.Tensor:
        return self.attn(self.norm1(x))

    def mlp_update(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(self.norm2(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attention_update(x)
        return x + self.mlp_update(x)
