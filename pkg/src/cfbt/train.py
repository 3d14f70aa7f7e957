"""Training loop: pair sampling, freezing, AdamW with step decay, checkpoints."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .boxes import BBox, iou
from .config import ModelConfig, TrainConfig
from .crops import crop_region, crop_to_tensor
from .data import RgbtSequence
from .errors import ConfigurationError, DataError, NumericError
from .losses import total_loss
from .model import CfbtModel, apply_freeze_policy, count_parameters
from .tracker import decode_box

CHECKPOINT_VERSION = 1


@dataclass
class SamplePair:
    """Crops for one training example, all from the same sequence."""

    ti_rgb: torch.Tensor
    ti_tir: torch.Tensor
    to_rgb: torch.Tensor
    to_tir: torch.Tensor
    s_rgb: torch.Tensor
    s_tir: torch.Tensor
    gt_norm: torch.Tensor
    sequence: str
    frames: tuple[int, int, int]


@dataclass
class TrainBatch:
    ti_rgb: torch.Tensor
    ti_tir: torch.Tensor
    to_rgb: torch.Tensor
    to_tir: torch.Tensor
    s_rgb: torch.Tensor
    s_tir: torch.Tensor
    gt_norm: torch.Tensor
    sequences: list[str]


def _template_crops(seq: RgbtSequence, index: int, cfg: ModelConfig):
    rgb, tir = seq.load_frame(index)
    box = seq.gt_rgb[index]
    c_rgb, _ = crop_region(rgb, box, cfg.template_size, cfg.template_context)
    c_tir, _ = crop_region(tir, box, cfg.template_size, cfg.template_context)
    return c_rgb, c_tir


def sample_pair(seq: RgbtSequence, cfg: ModelConfig, train_cfg: TrainConfig,
                rng: np.random.Generator, jitter: float = 0.2) -> SamplePair:
    """Draw an ordered (initial, online surrogate, search) frame triple."""
    n = len(seq)
    if n < 3:
        raise DataError(f"sequence {seq.name!r} shorter than 3 frames")
    for _ in range(64):
        t0 = int(rng.integers(0, n - 2))
        hi = min(n, t0 + train_cfg.max_frame_gap + 1)
        t1 = int(rng.integers(t0 + 1, hi - 1))
        t2 = int(rng.integers(t1 + 1, hi))
        if all(seq.gt_rgb[t].is_valid() for t in (t0, t1, t2)):
            break
    else:
        raise DataError(f"no valid frame triple in sequence {seq.name!r}")

    ti_rgb, ti_tir = _template_crops(seq, t0, cfg)
    to_rgb, to_tir = _template_crops(seq, t1, cfg)

    rgb, tir = seq.load_frame(t2)
    gt = seq.gt_rgb[t2]
    side = cfg.search_context * (gt.w * gt.h) ** 0.5
    max_shift = max(0.0, 0.5 * side - max(gt.w, gt.h) / 2 - 2)
    shift = min(jitter * side, max_shift)
    dx = float(rng.uniform(-shift, shift))
    dy = float(rng.uniform(-shift, shift))
    center_box = BBox.from_center(gt.cx + dx, gt.cy + dy, gt.w, gt.h)
    s_rgb, affine = crop_region(rgb, center_box, cfg.search_size, cfg.search_context)
    s_tir, _ = crop_region(tir, center_box, cfg.search_size, cfg.search_context)
    gt_norm = affine.frame_to_norm(gt)

    dtype = torch.float32
    return SamplePair(
        crop_to_tensor(ti_rgb, dtype), crop_to_tensor(ti_tir, dtype),
        crop_to_tensor(to_rgb, dtype), crop_to_tensor(to_tir, dtype),
        crop_to_tensor(s_rgb, dtype), crop_to_tensor(s_tir, dtype),
        torch.tensor(gt_norm.as_tuple(), dtype=dtype),
        seq.name, (t0, t1, t2))


def sample_pairs(sequences: list[RgbtSequence], cfg: ModelConfig,
                 train_cfg: TrainConfig, rng: np.random.Generator,
                 batch_size: int | None = None) -> tuple[TrainBatch, int]:
    """Uniformly sample ``batch_size`` pairs; returns (batch, short-sequence warnings)."""
    if not sequences:
        raise DataError("empty dataset")
    size = batch_size or train_cfg.batch_size
    pairs: list[SamplePair] = []
    warnings = 0
    while len(pairs) < size:
        seq = sequences[int(rng.integers(0, len(sequences)))]
        if len(seq) < 3:
            warnings += 1
            if warnings > 100 * size:
                raise DataError("no sequence with at least 3 frames")
            continue
        pairs.append(sample_pair(seq, cfg, train_cfg, rng))
    batch = TrainBatch(
        *(torch.stack([getattr(p, f) for p in pairs])
          for f in ("ti_rgb", "ti_tir", "to_rgb", "to_tir", "s_rgb", "s_tir",
                    "gt_norm")),
        sequences=[p.sequence for p in pairs])
    return batch, warnings


def build_optimizer(model: CfbtModel, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW over the trainable parameters only; freezing must be applied first."""
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ConfigurationError(
            "no trainable parameters; enable fusion modules or freeze_policy=none")
    return torch.optim.AdamW(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def save_checkpoint(path, model: CfbtModel, optimizer, step: int, epoch: int,
                    model_cfg: ModelConfig, train_cfg: TrainConfig,
                    sampler_state: dict) -> None:
    """Atomic single-file checkpoint whose weights use the manifest names."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_text(),
        "train_config": train_cfg.to_text(),
        "state": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "epoch": epoch,
        "torch_rng": torch.get_rng_state(),
        "sampler_rng": sampler_state,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('format_version')}")
    return payload


@dataclass
class TrainResult:
    history: list[dict]
    checkpoint_path: str | None
    steps: int
    sampler_warnings: int


def train(model: CfbtModel, sequences: list[RgbtSequence],
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir=None, resume=None) -> TrainResult:
    """Run the optimization loop; frozen parameters stay bit-identical.

    Writes ``train_log.jsonl`` and ``checkpoint.pt`` under ``out_dir`` when
    given. ``resume`` restores model, optimizer, and both RNG streams, so a
    resumed run continues the unbroken run exactly.
    """
    train_cfg.validate()
    apply_freeze_policy(model, train_cfg.freeze_policy)
    optimizer = build_optimizer(model, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    torch.manual_seed(train_cfg.seed)
    start_step = 0
    if resume is not None:
        payload = load_checkpoint(resume)
        model.load_state_dict(payload["state"])
        if payload["optimizer"] is not None:
            optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        rng.bit_generator.state = payload["sampler_rng"]
        start_step = payload["step"]

    frozen = [(name, p) for name, p in model.named_parameters()
              if not p.requires_grad]
    steps_per_epoch = max(1, train_cfg.samples_per_epoch // train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    if train_cfg.max_steps > 0:
        total_steps = min(total_steps, train_cfg.max_steps)

    log_fh = None
    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "a", encoding="utf-8")
        checkpoint_path = str(out_dir / "checkpoint.pt")

    history: list[dict] = []
    warnings = 0
    model.train()
    try:
        for step in range(start_step + 1, total_steps + 1):
            epoch = (step - 1) // steps_per_epoch + 1
            lr = train_cfg.lr_at_epoch(epoch)
            _set_lr(optimizer, lr)
            batch, w = sample_pairs(sequences, model_cfg, train_cfg, rng)
            warnings += w
            head = model(batch.ti_rgb, batch.ti_tir, batch.to_rgb, batch.to_tir,
                         batch.s_rgb, batch.s_tir)
            breakdown = total_loss(head, batch.gt_norm,
                                   model_cfg.lambda1, model_cfg.lambda2)
            if not torch.isfinite(breakdown.total):
                if checkpoint_path is not None:
                    save_checkpoint(str(out_dir / "diagnostic.pt"), model, optimizer,
                                    step, epoch, model_cfg, train_cfg,
                                    rng.bit_generator.state)
                raise NumericError(f"non-finite loss at step {step}")
            optimizer.zero_grad(set_to_none=True)
            breakdown.total.backward()
            for name, p in frozen:
                if p.grad is not None:
                    raise NumericError(f"gradient reached frozen parameter {name}")
            if train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(
                    (p for p in model.parameters() if p.requires_grad),
                    train_cfg.grad_clip)
            optimizer.step()
            record = {"step": step, "lr": lr, **breakdown.detached()}
            history.append(record)
            if log_fh is not None and (step % train_cfg.log_every == 0
                                       or step == total_steps):
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if (checkpoint_path is not None and train_cfg.checkpoint_every > 0
                    and step % train_cfg.checkpoint_every == 0):
                save_checkpoint(checkpoint_path, model, optimizer, step, epoch,
                                model_cfg, train_cfg, rng.bit_generator.state)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizer,
                        history[-1]["step"] if history else start_step,
                        train_cfg.epochs, model_cfg, train_cfg,
                        rng.bit_generator.state)
    return TrainResult(history, checkpoint_path, len(history), warnings)


def smoothed_losses(history: list[dict], window: int = 50) -> list[float]:
    """Exponentially smoothed total-loss curve (alpha = 2 / (window + 1))."""
    alpha = 2.0 / (window + 1)
    out: list[float] = []
    ema = None
    for record in history:
        value = record["total"]
        ema = value if ema is None else alpha * value + (1 - alpha) * ema
        out.append(ema)
    return out


@torch.no_grad()
def evaluate_training_iou(model: CfbtModel, sequences: list[RgbtSequence],
                          cfg: ModelConfig, max_frames_per_seq: int = 20) -> float:
    """Mean IoU of decoded boxes on gt-centered search crops of the training set."""
    model.eval()
    dtype = next(model.parameters()).dtype
    ious: list[float] = []
    for seq in sequences:
        ti_rgb, ti_tir = _template_crops(seq, 0, cfg)
        online_idx = max(1, len(seq) // 2)
        to_rgb, to_tir = _template_crops(seq, online_idx, cfg)
        t_tensors = [crop_to_tensor(c, dtype).unsqueeze(0)
                     for c in (ti_rgb, ti_tir, to_rgb, to_tir)]
        step = max(1, len(seq) // max_frames_per_seq)
        for t in range(0, len(seq), step):
            gt = seq.gt_rgb[t]
            if not gt.is_valid():
                continue
            rgb, tir = seq.load_frame(t)
            s_rgb, affine = crop_region(rgb, gt, cfg.search_size, cfg.search_context)
            s_tir, _ = crop_region(tir, gt, cfg.search_size, cfg.search_context)
            head = model(*t_tensors,
                         crop_to_tensor(s_rgb, dtype).unsqueeze(0),
                         crop_to_tensor(s_tir, dtype).unsqueeze(0))
            box, _ = decode_box(head, affine, cfg.cosine_window)
            ious.append(iou(box, gt))
    return float(np.mean(ious)) if ious else 0.0
