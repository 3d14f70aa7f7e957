"""Command-line surface: synth / train / track / eval / params / ablate / verify.

Every run writes ``resolved_config.txt`` (reloadable via ``--config``) into its
output directory. Exit codes: 0 success, 1 usage/configuration, 2 data,
3 numeric or verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .boxes import parse_box_line
from .config import (
    ModelConfig,
    SynthConfig,
    TrainConfig,
    desk_config,
    paper_config,
    parse_kv_text,
    split_config_mapping,
)
from .data import RgbtSequence, load_dataset
from .errors import (
    CfbtError,
    ConfigurationError,
    ContractViolation,
    DataError,
    NumericError,
    ShapeError,
)
from .metrics import compute_metrics, concatenate_frames
from .model import CfbtModel, apply_freeze_policy, parameter_audit, parameter_group
from .plots import emit_plots
from .synth import generate_dataset
from .tracker import ModelPredictor, OraclePredictor, SequenceTracker, save_result_file
from .train import load_checkpoint, train
from .verify import run_all_checks

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_PRESETS = {"desk": desk_config, "paper": paper_config}

# command-specific keys accepted through --config / --set, with defaults
_EXTRA_KEYS: dict[str, dict[str, str | None]] = {
    "synth": {"count": "8"},
    "train": {"preset": "desk", "dataset": None, "resume": None},
    "track": {"preset": "desk", "dataset": None, "checkpoint": None,
              "tracker": "model"},
    "eval": {"dataset": None, "results": None},
    "params": {"preset": "paper"},
    "ablate": {"preset": "desk", "steps": "20", "count": "2"},
    "verify": {"freeze_steps": "100"},
}


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures map onto exit code 1."""

    def error(self, message):
        raise ConfigurationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cfbt",
                     description="dual-branch RGB-T tracker toolbox")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("synth", "generate a synthetic RGB-T dataset"),
            ("train", "optimize the fusion modules on a dataset"),
            ("track", "run the tracker over every sequence of a dataset"),
            ("eval", "score tracking results and render plots"),
            ("params", "print the fusion parameter budget table"),
            ("ablate", "train every fusion-schedule variant briefly"),
            ("verify", "run the invariant and oracle check suite")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override one configuration key")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="seed shared by training and data synthesis")
    return parser


def _gather_mapping(args) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        mapping.update(parse_kv_text(path.read_text(encoding="utf-8")))
    for item in args.overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    return mapping


def _pop_extras(command: str, mapping: dict[str, str]) -> dict[str, str | None]:
    extras = dict(_EXTRA_KEYS[command])
    for key in list(mapping):
        if key in extras:
            extras[key] = mapping.pop(key)
    return extras


def _build_configs(mapping: dict[str, str], preset: str
                   ) -> tuple[ModelConfig, TrainConfig, SynthConfig]:
    if preset not in _PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; "
                                 f"choose from {sorted(_PRESETS)}")
    model_kv, train_kv, synth_kv = split_config_mapping(mapping)
    model_cfg = _PRESETS[preset]().override(model_kv)
    train_cfg = TrainConfig().override(train_kv)
    synth_cfg = SynthConfig().override(synth_kv)
    for cfg in (model_cfg, train_cfg, synth_cfg):
        cfg.validate()
    return model_cfg, train_cfg, synth_cfg


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("cfbt_runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, command: str, model_cfg: ModelConfig,
                    train_cfg: TrainConfig, synth_cfg: SynthConfig,
                    extras: dict[str, str | None]) -> None:
    lines = [f"# resolved configuration ({command})"]
    for key, value in sorted(extras.items()):
        if value is not None:
            lines.append(f"{key} = {value}")
    seen: set[str] = set()
    for cfg in (model_cfg, train_cfg, synth_cfg):
        for line in cfg.to_text().splitlines():
            key = line.split("=", 1)[0].strip()
            if key and not key.startswith("#") and key not in seen:
                seen.add(key)
                lines.append(line)
    (out / "resolved_config.txt").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")


def _load_sequences(dataset: str | None) -> list[RgbtSequence]:
    if not dataset:
        raise ConfigurationError("this command needs --set dataset=PATH")
    root = Path(dataset)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    report = load_dataset(root)
    if not report.sequences:
        raise DataError(f"no usable sequences under {root} "
                        f"({len(report.skipped)} skipped)")
    for name, reason in report.skipped:
        print(f"# skipped {name}: {reason}", file=sys.stderr)
    return report.sequences


class _LazyFrames:
    """Indexable view over a sequence's frame pairs, loaded on demand."""

    def __init__(self, seq: RgbtSequence):
        self._seq = seq

    def __len__(self) -> int:
        return len(self._seq)

    def __getitem__(self, index: int):
        return self._seq.load_frame(index)


def _cmd_synth(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("synth", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, "desk")
    out = _out_dir(args, "synth")
    _write_snapshot(out, "synth", model_cfg, train_cfg, synth_cfg, extras)
    count = int(extras["count"])
    if count <= 0:
        raise ConfigurationError("count must be positive")
    sequences = generate_dataset(synth_cfg, out / "dataset", count)
    for seq in sequences:
        print(f"{seq.name}: {len(seq)} frames, "
              f"attributes {sorted(seq.attributes)}")
    print(f"dataset = {out / 'dataset'}")
    return EXIT_OK


def _cmd_train(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("train", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, extras["preset"])
    out = _out_dir(args, "train")
    _write_snapshot(out, "train", model_cfg, train_cfg, synth_cfg, extras)
    sequences = _load_sequences(extras["dataset"])
    torch.manual_seed(train_cfg.seed)
    model = CfbtModel(model_cfg)
    result = train(model, sequences, model_cfg, train_cfg, out_dir=out,
                   resume=extras["resume"])
    final = result.history[-1]["total"] if result.history else float("nan")
    print(f"steps = {result.steps}")
    print(f"final_loss = {final:.6g}")
    print(f"checkpoint = {result.checkpoint_path}")
    return EXIT_OK


def _cmd_track(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("track", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, extras["preset"])
    out = _out_dir(args, "track")
    _write_snapshot(out, "track", model_cfg, train_cfg, synth_cfg, extras)
    sequences = _load_sequences(extras["dataset"])

    mode = extras["tracker"]
    if mode not in ("model", "oracle"):
        raise ConfigurationError(f"tracker must be 'model' or 'oracle', "
                                 f"got {mode!r}")
    predictor = None
    if mode == "model":
        if extras["checkpoint"]:
            payload = load_checkpoint(extras["checkpoint"])
            model_cfg = ModelConfig.from_text(payload["model_config"])
            model = CfbtModel(model_cfg)
            model.load_state_dict(payload["state"])
        else:
            torch.manual_seed(train_cfg.seed)
            model = CfbtModel(model_cfg)
        predictor = ModelPredictor(model)

    for seq in sequences:
        if mode == "oracle":
            predictor = OraclePredictor(seq.gt_rgb)
        tracker = SequenceTracker(predictor, model_cfg)
        result = tracker.track(_LazyFrames(seq), seq.gt_rgb[0])
        save_result_file(out / f"{seq.name}.txt", result.boxes)
        meta = {
            "frames": len(result.boxes),
            "flagged": int(sum(result.flagged)),
            "updates": [{"frame_index": e.frame_index,
                         "source_frame": e.source_frame,
                         "score": e.score} for e in result.updates],
        }
        (out / f"{seq.name}.updates.json").write_text(
            json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        print(f"{seq.name}: {meta['frames']} frames, "
              f"{len(meta['updates'])} template updates")
    return EXIT_OK


def _frame_tags(seq: RgbtSequence) -> list[set[str]]:
    per_frame = (seq.frame_attributes if seq.frame_attributes is not None
                 else [set() for _ in range(len(seq))])
    return [set(tags) | set(seq.attributes) for tags in per_frame]


def _cmd_eval(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("eval", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, "desk")
    out = _out_dir(args, "eval")
    _write_snapshot(out, "eval", model_cfg, train_cfg, synth_cfg, extras)
    sequences = _load_sequences(extras["dataset"])
    if not extras["results"]:
        raise ConfigurationError("eval needs --set results=DIR (track output)")
    results_dir = Path(extras["results"])

    per_sequence = []
    for seq in sequences:
        result_file = results_dir / f"{seq.name}.txt"
        if not result_file.is_file():
            raise DataError(f"missing result file {result_file}")
        pred = [parse_box_line(line)
                for line in result_file.read_text(encoding="utf-8").splitlines()
                if line.strip()]
        if len(pred) != len(seq):
            raise DataError(f"{result_file}: {len(pred)} boxes for "
                            f"{len(seq)} frames")
        per_sequence.append((pred, seq.gt_rgb, seq.gt_tir, _frame_tags(seq)))

    pred, gt_rgb, gt_tir, tags = concatenate_frames(per_sequence)
    report = compute_metrics(pred, gt_rgb, gt_tir, tags)
    written = emit_plots(report, out)
    for name in ("pr20", "npr", "sr", "mpr20", "msr"):
        print(f"{name} = {getattr(report, name):.6g}")
    print(f"frame_count = {report.frame_count}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_params(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("params", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, extras["preset"])
    out = _out_dir(args, "params")
    _write_snapshot(out, "params", model_cfg, train_cfg, synth_cfg, extras)
    audit = parameter_audit(model_cfg)
    lines = [f"# fusion parameter budget at preset '{extras['preset']}'",
             f"{'group':<14} {'parameters':>12} {'millions':>10}"]
    for key in ("cstaf", "cstcf", "cstaf_cstcf", "dsta", "fusion_total",
                "model_total"):
        lines.append(f"{key:<14} {audit[key]:>12,} {audit[key] / 1e6:>10.3f}")
    lines.append(f"fusion_fraction = {audit['fusion_fraction'] * 100:.4f}%")
    text = "\n".join(lines) + "\n"
    (out / "params.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _ablation_rows(cfg: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Fusion-presence lattice plus the layer-schedule variants."""
    cstf = cfg.cstaf_layers
    dsta = cfg.dsta_layers

    def variant(name, cstaf, cstcf, dsta_layers):
        changed = ModelConfig(**{**cfg.__dict__, "cstaf_layers": tuple(cstaf),
                                 "cstcf_layers": tuple(cstcf),
                                 "dsta_layers": tuple(dsta_layers)})
        changed.validate()
        return name, changed

    rows = [
        variant("baseline", (), (), ()),
        variant("cstaf", cstf, (), ()),
        variant("cstcf", (), cstf, ()),
        variant("cstaf_cstcf", cstf, cstf, ()),
        variant("full", cstf, cstf, dsta),
    ]
    for subset in ((cstf[0],), cstf[:2], (cstf[0], cstf[-1])):
        tag = "cstf_" + "_".join(str(l) for l in subset)
        rows.append(variant(tag, subset, subset, dsta))
    for subset in ((dsta[0],), dsta[:2], (dsta[0], dsta[-1])):
        tag = "dsta_" + "_".join(str(l) for l in subset)
        rows.append(variant(tag, cstf, cstf, subset))
    return rows


def _cmd_ablate(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("ablate", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, extras["preset"])
    out = _out_dir(args, "ablate")
    _write_snapshot(out, "ablate", model_cfg, train_cfg, synth_cfg, extras)
    steps = int(extras["steps"])
    count = int(extras["count"])
    if steps <= 0 or count <= 0:
        raise ConfigurationError("steps and count must be positive")
    if len(model_cfg.cstaf_layers) < 2 or len(model_cfg.dsta_layers) < 2:
        raise ConfigurationError(
            "ablate needs at least two scheduled layers per fusion module")

    sequences = generate_dataset(synth_cfg, out / "data", count)
    header = (f"{'row':<12} {'cstaf':<10} {'cstcf':<10} {'dsta':<10} "
              f"{'trainable':>10} {'final_loss':>11}")
    lines = [f"# fusion-schedule comparison, {steps} steps each", header]
    for name, cfg in _ablation_rows(model_cfg):
        torch.manual_seed(train_cfg.seed)
        model = CfbtModel(cfg)
        policy = "paper_default" if (cfg.cstaf_layers or cfg.cstcf_layers
                                     or cfg.dsta_layers) else "none"
        row_cfg = TrainConfig(**{**train_cfg.__dict__,
                                 "freeze_policy": policy,
                                 "epochs": 1, "max_steps": steps,
                                 "samples_per_epoch":
                                     steps * train_cfg.batch_size,
                                 "checkpoint_every": 0})
        trainable = sum(p.numel() for n, p in model.named_parameters()
                        if parameter_group(n) in ("cstaf", "cstcf", "dsta"))
        result = train(model, sequences, cfg, row_cfg)
        final = result.history[-1]["total"]

        def fmt(layers):
            return ",".join(str(l) for l in layers) if layers else "-"

        lines.append(f"{name:<12} {fmt(cfg.cstaf_layers):<10} "
                     f"{fmt(cfg.cstcf_layers):<10} {fmt(cfg.dsta_layers):<10} "
                     f"{trainable:>10,} {final:>11.4f}")
    text = "\n".join(lines) + "\n"
    (out / "ablation.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _cmd_verify(args) -> int:
    mapping = _gather_mapping(args)
    extras = _pop_extras("verify", mapping)
    model_cfg, train_cfg, synth_cfg = _build_configs(mapping, "desk")
    out = _out_dir(args, "verify")
    _write_snapshot(out, "verify", model_cfg, train_cfg, synth_cfg, extras)
    results = run_all_checks(freeze_steps=int(extras["freeze_steps"]))
    lines = [r.line() for r in results]
    (out / "verify.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "params": _cmd_params,
    "ablate": _cmd_ablate,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ContractViolation, ShapeError) as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CfbtError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
