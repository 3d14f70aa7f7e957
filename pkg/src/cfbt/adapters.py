"""The three lightweight fusion families.

* ``BottleneckAdapter`` — three stacked linear maps (down, mid, up) whose
  output is added to a residual stream as a prompt; up map starts at zero
  so a fresh adapter contributes nothing.
* ``CrossBranchFusion`` — the shared hourglass used for both template
  augmentation and search complementarity between the two branches:
  normalize, down-project, single-head cross-attention (one weight set
  serves both directions), up-project (zero-init), dropout, residual.
* ``DstaPoint`` — in-layer cross-branch prompt on search rows only, one
  independent adapter per (layer, residual point).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .encoder import TokenSequence
from .errors import ContractViolation, ShapeError


class BottleneckAdapter(nn.Module):
    """down -> mid -> up linear chain; up is zero-initialized."""

    def __init__(self, dim: int, bottleneck: int):
        super().__init__()
        self.down = nn.Linear(dim, bottleneck)
        self.mid = nn.Linear(bottleneck, bottleneck)
        self.up = nn.Linear(bottleneck, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.down.in_features:
            raise ShapeError(
                f"adapter expects width {self.down.in_features}, got {x.shape[-1]}")
        return self.up(self.mid(self.down(x)))


class CrossBranchFusion(nn.Module):
    """Hourglass cross-attention between two token blocks of equal width.

    One instance is shared across every layer it fires at; the direction
    weights are also shared, so swapping the inputs swaps the outputs.
    """

    def __init__(self, dim: int, down_factor: int = 16, drop_rate: float = 0.1):
        super().__init__()
        if dim % down_factor != 0:
            raise ShapeError(f"down_factor {down_factor} must divide dim {dim}")
        inner = dim // down_factor
        self.norm_a = nn.LayerNorm(dim)
        self.norm_b = nn.LayerNorm(dim)
        self.down = nn.Linear(dim, inner)
        self.q = nn.Linear(inner, inner)
        self.k = nn.Linear(inner, inner)
        self.v = nn.Linear(inner, inner)
        self.proj = nn.Linear(inner, inner)
        self.up = nn.Linear(inner, dim)
        self.drop = nn.Dropout(drop_rate)
        self.scale = inner ** -0.5
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def _attend(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        attn = (self.q(queries) @ self.k(context).transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        return self.proj(attn @ self.v(context))

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if a.shape[-1] != b.shape[-1]:
            raise ShapeError(f"width mismatch: {a.shape[-1]} vs {b.shape[-1]}")
        da = self.down(self.norm_a(a))
        db = self.down(self.norm_b(b))
        a_cross = self._attend(da, db)
        b_cross = self._attend(db, da)
        a_out = a + self.drop(self.up(a_cross))
        b_out = b + self.drop(self.up(b_cross))
        return a_out, b_out


def _check_rgb_pair(branch_i: TokenSequence, branch_o: TokenSequence, op: str) -> None:
    for seq in (branch_i, branch_o):
        if seq.modality != "rgb":
            raise ContractViolation(f"{op} operates on RGB streams, got {seq.modality!r}")
    if branch_i.branch == branch_o.branch:
        raise ContractViolation(f"{op} needs the two distinct branches")
    if (branch_i.n_template != branch_o.n_template
            or branch_i.n_search != branch_o.n_search):
        raise ShapeError("branch token layouts differ")


def apply_cstaf(branch_i: TokenSequence, branch_o: TokenSequence,
                fusion: CrossBranchFusion) -> tuple[TokenSequence, TokenSequence]:
    """Cross-fuse the template rows of the two RGB branches; search rows pass through."""
    _check_rgb_pair(branch_i, branch_o, "template fusion")
    z_i, z_o = fusion(branch_i.template_rows(), branch_o.template_rows())
    t_i = torch.cat([z_i, branch_i.search_rows()], dim=1)
    t_o = torch.cat([z_o, branch_o.search_rows()], dim=1)
    return branch_i.with_tokens(t_i), branch_o.with_tokens(t_o)


def apply_cstcf(branch_i: TokenSequence, branch_o: TokenSequence,
                fusion: CrossBranchFusion) -> tuple[TokenSequence, TokenSequence]:
    """Cross-fuse the search rows of the two RGB branches; template rows pass through."""
    _check_rgb_pair(branch_i, branch_o, "search fusion")
    s_i, s_o = fusion(branch_i.search_rows(), branch_o.search_rows())
    t_i = torch.cat([branch_i.template_rows(), s_i], dim=1)
    t_o = torch.cat([branch_o.template_rows(), s_o], dim=1)
    return branch_i.with_tokens(t_i), branch_o.with_tokens(t_o)


class DstaPoint(nn.Module):
    """One in-layer cross-branch prompt: a single adapter used in both directions."""

    def __init__(self, dim: int, bottleneck: int):
        super().__init__()
        self.adapter = BottleneckAdapter(dim, bottleneck)

    def fuse(self, branch_i: TokenSequence, branch_o: TokenSequence
             ) -> tuple[TokenSequence, TokenSequence]:
        _check_rgb_pair(branch_i, branch_o, "in-layer branch fusion")
        s_i = branch_i.search_rows()
        s_o = branch_o.search_rows()
        fused_i = torch.cat([branch_i.template_rows(), s_i + self.adapter(s_o)], dim=1)
        fused_o = torch.cat([branch_o.template_rows(), s_o + self.adapter(s_i)], dim=1)
        return branch_i.with_tokens(fused_i), branch_o.with_tokens(fused_o)


class DstaLayerAdapter(nn.Module):
    """The pair of prompts (post-attention, post-MLP) for one encoder layer.

    Instances are independent across layers, unlike the shared hourglass
    modules.
    """

    def __init__(self, dim: int, bottleneck: int):
        super().__init__()
        self.attn_point = DstaPoint(dim, bottleneck)
        self.mlp_point = DstaPoint(dim, bottleneck)


def dsta_fuse(branch_i: TokenSequence, branch_o: TokenSequence,
              point: DstaPoint) -> tuple[TokenSequence, TokenSequence]:
    return point.fuse(branch_i, branch_o)
