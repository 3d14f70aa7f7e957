"""Configuration objects and the flat ``key = value`` config file dialect.

Every config class serializes to one key per line. Unknown keys are an
error, both when a class parses its own file and when the CLI splits a
combined file across classes.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ConfigurationError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a dict. '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_value(name: str, text: str, ftype: Any) -> Any:
    try:
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
        if ftype is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if ftype is str:
            return text
        if ftype == tuple[int, ...]:
            if not text:
                return ()
            return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name!r}: {exc}") from None
    raise ConfigurationError(f"unsupported field type for {name!r}: {ftype}")


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


class _KvConfig:
    """Mixin giving dataclass configs the key-value file round trip."""

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], strict: bool = True):
        resolved = typing.get_type_hints(cls)
        kwargs = {}
        for key, text in mapping.items():
            if key not in resolved:
                if strict:
                    raise ConfigurationError(f"unknown config key {key!r} for {cls.__name__}")
                continue
            kwargs[key] = _parse_value(key, text, resolved[key])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str):
        return cls.from_mapping(parse_kv_text(text))

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def override(self, mapping: Mapping[str, str]):
        """Return a copy with string overrides applied on top."""
        base = parse_kv_text(self.to_text())
        base.update(mapping)
        return type(self).from_mapping(base)

    def validate(self) -> None:  # pragma: no cover - overridden
        pass


@dataclass
class ModelConfig(_KvConfig):
    """Network geometry and fusion schedule.

    ``cstaf_layers`` / ``cstcf_layers`` hold the (1-based) encoder layers
    after which template / search cross-branch fusion runs; ``dsta_layers``
    hold the layers whose two residual points get the in-layer cross-branch
    adapter. ``ba_bottleneck = 0`` means "derive from width".
    """

    embed_dim: int = 96
    depth: int = 12
    num_heads: int = 3
    patch_size: int = 16
    template_size: int = 64
    search_size: int = 128
    down_factor: int = 16
    ba_bottleneck: int = 0
    cstaf_layers: tuple[int, ...] = (4, 7, 10)
    cstcf_layers: tuple[int, ...] = (4, 7, 10)
    dsta_layers: tuple[int, ...] = (5, 6, 11)
    drop_rate: float = 0.1
    update_interval: int = 50
    lambda1: float = 2.0
    lambda2: float = 5.0
    template_context: float = 2.0
    search_context: float = 4.0
    head_input: str = "sum_all"
    head_width: int = 64
    cosine_window: bool = False

    def validate(self) -> None:
        if self.embed_dim <= 0 or self.depth <= 0 or self.num_heads <= 0:
            raise ConfigurationError("embed_dim, depth, num_heads must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.patch_size <= 0:
            raise ConfigurationError("patch_size must be positive")
        for name in ("template_size", "search_size"):
            size = getattr(self, name)
            if size <= 0 or size % self.patch_size != 0:
                raise ConfigurationError(
                    f"{name} {size} must be a positive multiple of patch_size {self.patch_size}")
        if self.down_factor <= 0 or self.embed_dim % self.down_factor != 0:
            raise ConfigurationError(
                f"down_factor {self.down_factor} must divide embed_dim {self.embed_dim}")
        if self.ba_bottleneck < 0:
            raise ConfigurationError("ba_bottleneck must be >= 0")
        for name in ("cstaf_layers", "cstcf_layers", "dsta_layers"):
            layers = getattr(self, name)
            bad = [l for l in layers if not 1 <= l <= self.depth]
            if bad:
                raise ConfigurationError(f"{name} {bad} outside 1..{self.depth}")
            if tuple(sorted(set(layers))) != tuple(layers):
                object.__setattr__(self, name, tuple(sorted(set(layers))))
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigurationError("drop_rate must be in [0, 1]")
        if self.update_interval <= 0:
            raise ConfigurationError("update_interval must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if self.template_context <= 0 or self.search_context <= 0:
            raise ConfigurationError("context factors must be positive")
        if self.head_input not in ("sum_all", "rgb_only"):
            raise ConfigurationError(f"head_input must be sum_all or rgb_only, got {self.head_input!r}")
        if self.head_width <= 0:
            raise ConfigurationError("head_width must be positive")

    @property
    def n_template(self) -> int:
        return (self.template_size // self.patch_size) ** 2

    @property
    def n_search(self) -> int:
        return (self.search_size // self.patch_size) ** 2

    @property
    def fusion_width(self) -> int:
        return self.embed_dim // self.down_factor

    @property
    def ba_width(self) -> int:
        if self.ba_bottleneck > 0:
            return self.ba_bottleneck
        return max(2, self.embed_dim // 96)

    @property
    def score_grid(self) -> int:
        return self.search_size // self.patch_size


def desk_config(**overrides) -> ModelConfig:
    """Small model trainable on CPU; the package default."""
    cfg = ModelConfig(**overrides)
    cfg.validate()
    return cfg


def paper_config(**overrides) -> ModelConfig:
    """Full-scale geometry used for parameter audits (not for CPU training)."""
    base = dict(embed_dim=768, depth=12, num_heads=12, patch_size=16,
                template_size=128, search_size=256)
    base.update(overrides)
    cfg = ModelConfig(**base)
    cfg.validate()
    return cfg


@dataclass
class TrainConfig(_KvConfig):
    """Optimization recipe. Defaults are the desk-scale settings."""

    batch_size: int = 8
    epochs: int = 25
    samples_per_epoch: int = 512
    base_lr: float = 1e-4
    lr_drop_epoch: int = 20
    lr_drop_factor: float = 10.0
    weight_decay: float = 1e-4
    seed: int = 0
    freeze_policy: str = "paper_default"
    max_frame_gap: int = 60
    grad_clip: float = 1.0
    max_steps: int = 0
    checkpoint_every: int = 0
    log_every: int = 10

    def validate(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0 or self.samples_per_epoch <= 0:
            raise ConfigurationError("batch_size, epochs, samples_per_epoch must be positive")
        if self.base_lr <= 0 or self.lr_drop_factor <= 0:
            raise ConfigurationError("base_lr and lr_drop_factor must be positive")
        if self.freeze_policy not in ("paper_default", "none"):
            raise ConfigurationError(
                f"freeze_policy must be paper_default or none, got {self.freeze_policy!r}")
        if self.max_frame_gap < 2:
            raise ConfigurationError("max_frame_gap must be at least 2")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigurationError("weight_decay and grad_clip must be nonnegative")

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index (step decay)."""
        if epoch > self.lr_drop_epoch:
            return self.base_lr / self.lr_drop_factor
        return self.base_lr


@dataclass
class SynthConfig(_KvConfig):
    """Synthetic RGB-T sequence generator parameters."""

    frame_width: int = 320
    frame_height: int = 240
    num_frames: int = 60
    target_size: int = 40
    target_shape: str = "ellipse"
    speed: float = 3.0
    scale_drift: float = 0.0
    distractors: int = 2
    occluder_start: int = -1
    occluder_end: int = -1
    tir_offset: int = 110
    tir_blur: int = 5
    tir_noise: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ConfigurationError("frame dimensions must be positive")
        if self.num_frames <= 0:
            raise ConfigurationError("num_frames must be positive")
        if self.target_size <= 0:
            raise ConfigurationError("target_size must be positive")
        if self.target_shape not in ("ellipse", "rect"):
            raise ConfigurationError(f"target_shape must be ellipse or rect, got {self.target_shape!r}")
        if self.distractors < 0:
            raise ConfigurationError("distractors must be nonnegative")
        if self.tir_blur < 0 or self.tir_blur % 2 == 0 and self.tir_blur != 0:
            raise ConfigurationError("tir_blur must be 0 or an odd kernel size")
        if (self.occluder_start >= 0) != (self.occluder_end >= 0):
            raise ConfigurationError("occluder_start and occluder_end must be set together")
        if self.occluder_start >= 0 and self.occluder_end < self.occluder_start:
            raise ConfigurationError("occluder_end must be >= occluder_start")


_SHARED_KEYS = {"seed"}


def split_config_mapping(mapping: Mapping[str, str]) -> tuple[dict, dict, dict]:
    """Split a combined CLI config file into per-class mappings.

    ``seed`` feeds both the train and synth configs. Any key not owned by
    one of the three classes is an error.
    """
    model_keys = set(ModelConfig.field_names()) | {"cstf_layers"}
    train_keys = set(TrainConfig.field_names())
    synth_keys = set(SynthConfig.field_names())
    model_kv: dict[str, str] = {}
    train_kv: dict[str, str] = {}
    synth_kv: dict[str, str] = {}
    for key, value in mapping.items():
        known = False
        if key in model_keys:
            if key == "cstf_layers":
                model_kv["cstaf_layers"] = value
                model_kv["cstcf_layers"] = value
            else:
                model_kv[key] = value
            known = True
        if key in train_keys and (key in _SHARED_KEYS or not known):
            train_kv[key] = value
            known = True
        if key in synth_keys and (key in _SHARED_KEYS or not known):
            synth_kv[key] = value
            known = True
        if not known:
            raise ConfigurationError(f"unknown config key {key!r}")
    return model_kv, train_kv, synth_kv
