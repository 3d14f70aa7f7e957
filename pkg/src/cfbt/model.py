"""Dual-branch, dual-modality tracker network.

Four token streams (initial/online branch x RGB/TIR) run through one set
of shared encoder weights. Cross-modal prompts fire at every layer's two
residual points; cross-branch fusion fires on the RGB pair according to
the configured layer schedules:

* in-layer adapter prompts on search rows at ``dsta_layers`` (independent
  weights per layer),
* template fusion then search fusion after ``cstaf_layers`` /
  ``cstcf_layers`` (one shared module each).

Search rows of the final streams are summed and decoded by the head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .adapters import (BottleneckAdapter, CrossBranchFusion, DstaLayerAdapter,
                       apply_cstaf, apply_cstcf)
from .config import ModelConfig
from .encoder import (BRANCHES, MODALITIES, EncoderLayer, PatchEmbed,
                      TokenSequence, assemble_branch_input)
from .errors import ConfigurationError, ShapeError
from .head import HeadOutput, PredictionHead

TRAINABLE_GROUPS = ("cstaf", "cstcf", "dsta")


@dataclass
class ForwardFeatures:
    """Final per-stream token sequences plus the summed head input."""

    streams: dict[tuple[str, str], TokenSequence]
    fused_search: torch.Tensor


class CfbtModel(nn.Module):
    """The assembled tracker network."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        dim = config.embed_dim
        self.patch_embed_template = PatchEmbed(config, "template")
        self.patch_embed_search = PatchEmbed(config, "search")
        self.layers = nn.ModuleList(
            EncoderLayer(dim, config.num_heads) for _ in range(config.depth))
        self.ba_attn = nn.ModuleList(
            BottleneckAdapter(dim, config.ba_width) for _ in range(config.depth))
        self.ba_mlp = nn.ModuleList(
            BottleneckAdapter(dim, config.ba_width) for _ in range(config.depth))
        self.norm = nn.LayerNorm(dim)
        self.cstaf = (CrossBranchFusion(dim, config.down_factor, config.drop_rate)
                      if config.cstaf_layers else None)
        self.cstcf = (CrossBranchFusion(dim, config.down_factor, config.drop_rate)
                      if config.cstcf_layers else None)
        self.dsta = nn.ModuleDict(
            {str(l): DstaLayerAdapter(dim, config.ba_width) for l in config.dsta_layers})
        self.head = PredictionHead(dim, config.head_width)

    # -- schedule lookups ---------------------------------------------------

    def cstaf_at(self, layer: int) -> CrossBranchFusion | None:
        return self.cstaf if layer in self.config.cstaf_layers else None

    def cstcf_at(self, layer: int) -> CrossBranchFusion | None:
        return self.cstcf if layer in self.config.cstcf_layers else None

    def dsta_at(self, layer: int) -> DstaLayerAdapter | None:
        return self.dsta[str(layer)] if str(layer) in self.dsta else None

    # -- forward ------------------------------------------------------------

    def embed_streams(self, t_initial_rgb, t_initial_tir, t_online_rgb,
                      t_online_tir, s_rgb, s_tir) -> dict[tuple[str, str], TokenSequence]:
        templates = {
            ("initial", "rgb"): t_initial_rgb,
            ("initial", "tir"): t_initial_tir,
            ("online", "rgb"): t_online_rgb,
            ("online", "tir"): t_online_tir,
        }
        search = {"rgb": s_rgb, "tir": s_tir}
        search_tokens = {m: self.patch_embed_search(search[m]) for m in MODALITIES}
        streams = {}
        for branch in BRANCHES:
            for modality in MODALITIES:
                z = self.patch_embed_template(templates[(branch, modality)])
                streams[(branch, modality)] = assemble_branch_input(
                    z, search_tokens[modality], branch, modality)
        return streams

    def _cross_modal_stage(self, streams, layer: EncoderLayer,
                           adapter: BottleneckAdapter, stage: str) -> None:
        update = layer.attention_update if stage == "attn" else layer.mlp_update
        snapshot = {key: seq.tokens for key, seq in streams.items()}
        for branch in BRANCHES:
            rgb = snapshot[(branch, "rgb")]
            tir = snapshot[(branch, "tir")]
            streams[(branch, "rgb")] = streams[(branch, "rgb")].with_tokens(
                rgb + update(rgb) + adapter(tir))
            streams[(branch, "tir")] = streams[(branch, "tir")].with_tokens(
                tir + update(tir) + adapter(rgb))

    def forward_features(self, t_initial_rgb, t_initial_tir, t_online_rgb,
                         t_online_tir, s_rgb, s_tir) -> ForwardFeatures:
        streams = self.embed_streams(t_initial_rgb, t_initial_tir, t_online_rgb,
                                     t_online_tir, s_rgb, s_tir)
        for idx, layer in enumerate(self.layers, start=1):
            self._cross_modal_stage(streams, layer, self.ba_attn[idx - 1], "attn")
            dsta = self.dsta_at(idx)
            if dsta is not None:
                streams[("initial", "rgb")], streams[("online", "rgb")] = \
                    dsta.attn_point.fuse(streams[("initial", "rgb")],
                                         streams[("online", "rgb")])
            self._cross_modal_stage(streams, layer, self.ba_mlp[idx - 1], "mlp")
            if dsta is not None:
                streams[("initial", "rgb")], streams[("online", "rgb")] = \
                    dsta.mlp_point.fuse(streams[("initial", "rgb")],
                                        streams[("online", "rgb")])
            cstaf = self.cstaf_at(idx)
            if cstaf is not None:
                streams[("initial", "rgb")], streams[("online", "rgb")] = \
                    apply_cstaf(streams[("initial", "rgb")],
                                streams[("online", "rgb")], cstaf)
            cstcf = self.cstcf_at(idx)
            if cstcf is not None:
                streams[("initial", "rgb")], streams[("online", "rgb")] = \
                    apply_cstcf(streams[("initial", "rgb")],
                                streams[("online", "rgb")], cstcf)
        normed = {key: seq.with_tokens(self.norm(seq.tokens))
                  for key, seq in streams.items()}
        if self.config.head_input == "rgb_only":
            keys = [(b, "rgb") for b in BRANCHES]
        else:
            keys = list(normed.keys())
        fused = sum(normed[k].search_rows() for k in keys)
        return ForwardFeatures(normed, fused)

    def forward(self, t_initial_rgb, t_initial_tir, t_online_rgb,
                t_online_tir, s_rgb, s_tir) -> HeadOutput:
        features = self.forward_features(t_initial_rgb, t_initial_tir,
                                         t_online_rgb, t_online_tir, s_rgb, s_tir)
        return self.head(features.fused_search)


# -- freezing and parameter accounting ---------------------------------------


def parameter_group(name: str) -> str:
    """Map a state-dict name onto its audit group."""
    if name.startswith("cstaf."):
        return "cstaf"
    if name.startswith("cstcf."):
        return "cstcf"
    if name.startswith("dsta."):
        return "dsta"
    if name.startswith(("ba_attn.", "ba_mlp.")):
        return "modality_ba"
    if name.startswith("head."):
        return "head"
    return "encoder"


def apply_freeze_policy(model: CfbtModel, policy: str) -> None:
    """paper_default: only the cross-branch fusion modules stay trainable."""
    if policy == "none":
        for p in model.parameters():
            p.requires_grad_(True)
        return
    if policy != "paper_default":
        raise ConfigurationError(f"unknown freeze policy {policy!r}")
    for name, p in model.named_parameters():
        p.requires_grad_(parameter_group(name) in TRAINABLE_GROUPS)


def count_parameters(model: nn.Module, which: str = "all") -> int:
    if which == "all":
        return sum(p.numel() for p in model.parameters())
    if which == "trainable":
        return sum(p.numel() for p in model.parameters() if p.requires_grad)
    raise ConfigurationError(f"unknown filter {which!r}")


def group_parameter_counts(model: CfbtModel) -> dict[str, int]:
    counts: dict[str, int] = {}
    for name, p in model.named_parameters():
        group = parameter_group(name)
        counts[group] = counts.get(group, 0) + p.numel()
    return counts


def parameter_audit(config: ModelConfig) -> dict[str, int | float]:
    """Fusion-module budget table for a config, without training anything."""
    model = CfbtModel(config)
    groups = group_parameter_counts(model)
    cstaf = groups.get("cstaf", 0)
    cstcf = groups.get("cstcf", 0)
    dsta = groups.get("dsta", 0)
    total = count_parameters(model)
    fusion = cstaf + cstcf + dsta
    return {
        "cstaf": cstaf,
        "cstcf": cstcf,
        "cstaf_cstcf": cstaf + cstcf,
        "dsta": dsta,
        "fusion_total": fusion,
        "model_total": total,
        "fusion_fraction": fusion / total if total else 0.0,
    }


# -- weight import hook -------------------------------------------------------


def parameter_manifest(model: nn.Module) -> dict[str, tuple[int, ...]]:
    """Documented name -> shape map for externally converted weights."""
    return {name: tuple(t.shape) for name, t in model.state_dict().items()}


def load_external_weights(model: nn.Module, arrays: dict) -> list[str]:
    """Load a name -> array mapping produced against ``parameter_manifest``.

    Returns the manifest names absent from ``arrays``; unknown names or
    shape mismatches are errors.
    """
    manifest = parameter_manifest(model)
    state = model.state_dict()
    unknown = [k for k in arrays if k not in manifest]
    if unknown:
        raise ShapeError(f"unknown weight names: {unknown[:5]}")
    for name, value in arrays.items():
        tensor = torch.as_tensor(value)
        if tuple(tensor.shape) != manifest[name]:
            raise ShapeError(
                f"shape mismatch for {name}: file {tuple(tensor.shape)},"
                f" model {manifest[name]}")
        state[name] = tensor.to(state[name].dtype)
    model.load_state_dict(state)
    return [k for k in manifest if k not in arrays]


def baseline_clone(model: CfbtModel) -> CfbtModel:
    """Same encoder/adapter/head weights with every cross-branch module removed."""
    cfg = model.config
    base_cfg = ModelConfig(**{**cfg.__dict__,
                              "cstaf_layers": (), "cstcf_layers": (),
                              "dsta_layers": ()})
    clone = CfbtModel(base_cfg).to(next(model.parameters()).dtype)
    shared = {name: t for name, t in model.state_dict().items()
              if parameter_group(name) not in TRAINABLE_GROUPS}
    missing = clone.load_state_dict(shared, strict=False)
    if missing.unexpected_keys:
        raise ShapeError(f"unexpected keys when cloning: {missing.unexpected_keys[:5]}")
    return clone
