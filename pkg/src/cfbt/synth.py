"""Deterministic synthetic RGB-T sequences with exact ground truth.

A colored target bounces over a static textured background among
similar-looking distractors; the thermal channel renders the target hot
over a cool scene, then blurs and adds noise. Frames, annotations, and
attribute tags land on disk in the same layout ``load_dataset`` reads.
"""

from __future__ import annotations

import math
from pathlib import Path

import cv2
import numpy as np

from .boxes import BBox
from .config import SynthConfig
from .data import RgbtSequence, load_dataset
from .errors import ConfigurationError

OCCLUDER_COLOR = (70, 70, 70)


class _Mover:
    """Constant-speed point with wall reflection keeping a box inside the frame."""

    def __init__(self, rng: np.random.Generator, frame_w: int, frame_h: int,
                 half_w: float, half_h: float, speed: float):
        self.fw, self.fh = frame_w, frame_h
        margin_x = half_w + 2
        margin_y = half_h + 2
        if margin_x >= frame_w - margin_x or margin_y >= frame_h - margin_y:
            raise ConfigurationError("target too large to stay inside the frame")
        self.x = rng.uniform(margin_x, frame_w - margin_x)
        self.y = rng.uniform(margin_y, frame_h - margin_y)
        angle = rng.uniform(0, 2 * math.pi)
        self.vx = speed * math.cos(angle)
        self.vy = speed * math.sin(angle)

    def step(self, half_w: float, half_h: float) -> tuple[float, float]:
        self.x += self.vx
        self.y += self.vy
        lo_x, hi_x = half_w + 1, self.fw - half_w - 1
        lo_y, hi_y = half_h + 1, self.fh - half_h - 1
        if lo_x >= hi_x or lo_y >= hi_y:
            raise ConfigurationError("target too large to stay inside the frame")
        if self.x < lo_x:
            self.x = 2 * lo_x - self.x
            self.vx = abs(self.vx)
        elif self.x > hi_x:
            self.x = 2 * hi_x - self.x
            self.vx = -abs(self.vx)
        if self.y < lo_y:
            self.y = 2 * lo_y - self.y
            self.vy = abs(self.vy)
        elif self.y > hi_y:
            self.y = 2 * hi_y - self.y
            self.vy = -abs(self.vy)
        return self.x, self.y


def _draw_shape(image: np.ndarray, shape: str, cx: int, cy: int,
                w: int, h: int, color) -> None:
    if shape == "ellipse":
        cv2.ellipse(image, (cx, cy), (w // 2, h // 2), 0, 0, 360, color, -1)
    else:
        cv2.rectangle(image, (cx - w // 2, cy - h // 2),
                      (cx - w // 2 + w - 1, cy - h // 2 + h - 1), color, -1)


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    noise = rng.integers(40, 200, size=(height // 8 + 1, width // 8 + 1, 3),
                         dtype=np.uint8)
    bg = cv2.resize(noise, (width, height), interpolation=cv2.INTER_LINEAR)
    return cv2.GaussianBlur(bg, (11, 11), 0)


def generate_synthetic(cfg: SynthConfig, root, name: str | None = None
                       ) -> RgbtSequence:
    """Render one sequence under ``root`` and return it re-loaded from disk."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if name is None:
        name = f"synth_{cfg.seed:03d}"
    seq_dir = Path(root) / name
    vis_dir = seq_dir / "visible"
    tir_dir = seq_dir / "infrared"
    vis_dir.mkdir(parents=True, exist_ok=True)
    tir_dir.mkdir(parents=True, exist_ok=True)

    fw, fh = cfg.frame_width, cfg.frame_height
    background = _background(rng, fw, fh)
    target_color = tuple(int(c) for c in rng.integers(140, 256, size=3))
    distractor_colors = [tuple(int(max(0, min(255, c + rng.integers(-25, 26))))
                               for c in target_color)
                         for _ in range(cfg.distractors)]

    size = float(cfg.target_size)
    aspect = rng.uniform(0.75, 1.3)
    target = _Mover(rng, fw, fh, size / 2, size * aspect / 2, cfg.speed)
    distractors = [_Mover(rng, fw, fh, size / 2, size / 2,
                          cfg.speed * rng.uniform(0.6, 1.4))
                   for _ in range(cfg.distractors)]

    boxes: list[BBox] = []
    frame_tags: list[set[str]] = []
    for t in range(cfg.num_frames):
        w = max(4, int(round(size)))
        h = max(4, int(round(size * aspect)))
        if w >= fw - 2 or h >= fh - 2:
            raise ConfigurationError("target grew beyond the frame")
        cx, cy = target.step(w / 2, h / 2)
        cx_i, cy_i = int(round(cx)), int(round(cy))

        rgb = background.copy()
        tir = (cv2.cvtColor(background, cv2.COLOR_BGR2GRAY) * 0.35).astype(np.uint8)
        for mover, color in zip(distractors, distractor_colors):
            dx, dy = mover.step(size / 2, size / 2)
            _draw_shape(rgb, cfg.target_shape, int(round(dx)), int(round(dy)),
                        int(size), int(size), color)
            _draw_shape(tir, cfg.target_shape, int(round(dx)), int(round(dy)),
                        int(size), int(size), min(255, 40 + cfg.tir_offset // 3))
        _draw_shape(rgb, cfg.target_shape, cx_i, cy_i, w, h, target_color)
        _draw_shape(tir, cfg.target_shape, cx_i, cy_i, w, h,
                    min(255, 60 + cfg.tir_offset))

        tags: set[str] = set()
        if cfg.distractors > 0:
            tags.add("SA")
        occluded = cfg.occluder_start >= 0 and cfg.occluder_start <= t <= cfg.occluder_end
        if occluded:
            pad_w, pad_h = int(w * 0.2) + 2, int(h * 0.2) + 2
            p1 = (cx_i - w // 2 - pad_w, cy_i - h // 2 - pad_h)
            p2 = (cx_i + w // 2 + pad_w, cy_i + h // 2 + pad_h)
            cv2.rectangle(rgb, p1, p2, OCCLUDER_COLOR, -1)
            cv2.rectangle(tir, p1, p2, 30, -1)
            tags.add("HO")

        if cfg.tir_blur > 0:
            tir = cv2.GaussianBlur(tir, (cfg.tir_blur, cfg.tir_blur), 0)
        if cfg.tir_noise > 0:
            noise = rng.normal(0, cfg.tir_noise, size=tir.shape)
            tir = np.clip(tir.astype(np.float64) + noise, 0, 255).astype(np.uint8)
        tir3 = cv2.merge([tir, tir, tir])

        cv2.imwrite(str(vis_dir / f"{t:06d}.png"), rgb)
        cv2.imwrite(str(tir_dir / f"{t:06d}.png"), tir3)
        boxes.append(BBox(cx_i - w // 2, cy_i - h // 2, w, h))
        frame_tags.append(tags)
        size *= (1.0 + cfg.scale_drift)

    gt_lines = "\n".join(f"{int(b.x)},{int(b.y)},{int(b.w)},{int(b.h)}"
                         for b in boxes) + "\n"
    (seq_dir / "visible.txt").write_text(gt_lines, encoding="utf-8")
    (seq_dir / "infrared.txt").write_text(gt_lines, encoding="utf-8")
    all_tags = sorted(set().union(*frame_tags)) if frame_tags else []
    (seq_dir / "attributes.txt").write_text(" ".join(all_tags) + "\n", encoding="utf-8")
    (seq_dir / "frame_attributes.txt").write_text(
        "\n".join(",".join(sorted(tags)) for tags in frame_tags) + "\n",
        encoding="utf-8")

    report = load_dataset(seq_dir.parent)
    for seq in report.sequences:
        if seq.name == name:
            return seq
    raise ConfigurationError(f"generated sequence {name!r} failed to reload")


def generate_dataset(base_cfg: SynthConfig, root, count: int) -> list[RgbtSequence]:
    """Generate ``count`` sequences with seeds ``base_seed .. base_seed+count-1``."""
    out = []
    for i in range(count):
        cfg = SynthConfig(**{**base_cfg.__dict__, "seed": base_cfg.seed + i})
        out.append(generate_synthetic(cfg, root))
    return out
