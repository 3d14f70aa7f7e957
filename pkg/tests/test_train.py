"""Training loop: sampling, freezing, checkpoints, resume equivalence."""

import numpy as np
import pytest
import torch

from cfbt.config import ModelConfig, TrainConfig
from cfbt.data import RgbtSequence
from cfbt.errors import ConfigurationError, DataError, NumericError
from cfbt.model import CfbtModel, apply_freeze_policy
from cfbt.train import (build_optimizer, load_checkpoint, sample_pair,
                        sample_pairs, smoothed_losses, train)


def _tcfg(**over):
    base = dict(batch_size=2, epochs=1, samples_per_epoch=8, base_lr=1e-3,
                freeze_policy="paper_default", seed=0, max_frame_gap=10,
                checkpoint_every=0, log_every=1)
    base.update(over)
    return TrainConfig(**base)


def test_sample_pair_triple_ordered_within_gap(desk_cfg, synth_sequences):
    rng = np.random.default_rng(3)
    tcfg = _tcfg(max_frame_gap=6)
    for _ in range(30):
        pair = sample_pair(synth_sequences[0], desk_cfg, tcfg, rng)
        t0, t1, t2 = pair.frames
        assert t0 < t1 < t2
        assert t2 - t0 <= 6


def test_sample_pair_target_inside_search_crop(desk_cfg, synth_sequences):
    # the jittered crop center never pushes the target outside the crop,
    # so normalized coordinates stay within the unit square
    rng = np.random.default_rng(11)
    for _ in range(30):
        pair = sample_pair(synth_sequences[0], desk_cfg, _tcfg(), rng)
        x, y, w, h = pair.gt_norm.tolist()
        assert 0.0 <= x and x + w <= 1.0
        assert 0.0 <= y and y + h <= 1.0
        assert w > 0 and h > 0


def test_sample_pair_crop_shapes(desk_cfg, synth_sequences):
    rng = np.random.default_rng(0)
    pair = sample_pair(synth_sequences[0], desk_cfg, _tcfg(), rng)
    z, x = desk_cfg.template_size, desk_cfg.search_size
    assert pair.ti_rgb.shape == (3, z, z)
    assert pair.to_tir.shape == (3, z, z)
    assert pair.s_rgb.shape == (3, x, x)


def test_sample_pairs_draws_sequences_uniformly(desk_cfg, synth_sequences):
    rng = np.random.default_rng(5)
    batch, warnings = sample_pairs(synth_sequences, desk_cfg, _tcfg(), rng,
                                   batch_size=240)
    assert warnings == 0
    counts = {s.name: batch.sequences.count(s.name) for s in synth_sequences}
    n, p = 240, 1 / len(synth_sequences)
    sigma = (n * p * (1 - p)) ** 0.5
    for c in counts.values():
        assert abs(c - n * p) <= 3 * sigma


def test_sample_pairs_rejects_all_short_sequences(desk_cfg):
    short = RgbtSequence("tiny", ["a.png", "b.png"], ["a.png", "b.png"],
                         gt_rgb=[], gt_tir=[])
    with pytest.raises(DataError):
        sample_pairs([short], desk_cfg, _tcfg(batch_size=1),
                     np.random.default_rng(0))


def test_build_optimizer_needs_trainable_params(desk_cfg):
    model = CfbtModel(desk_cfg)
    for p in model.parameters():
        p.requires_grad_(False)
    with pytest.raises(ConfigurationError):
        build_optimizer(model, _tcfg())


def test_frozen_parameters_unchanged_by_short_run(desk_cfg, synth_sequences):
    model = CfbtModel(desk_cfg)
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    result = train(model, synth_sequences, desk_cfg,
                   _tcfg(max_steps=3, samples_per_epoch=6))
    assert result.steps == 3
    moved = 0
    for n, p in model.named_parameters():
        if p.requires_grad:
            moved += int(not torch.equal(p, before[n]))
        else:
            assert torch.equal(p, before[n]), n
    assert moved > 0


def test_resume_matches_unbroken_run(desk_cfg, synth_sequences, tmp_path):
    def fresh():
        torch.manual_seed(42)
        return CfbtModel(desk_cfg)

    straight = fresh()
    train(straight, synth_sequences, desk_cfg,
          _tcfg(max_steps=4, samples_per_epoch=8))

    resumed = fresh()
    out = tmp_path / "run"
    train(resumed, synth_sequences, desk_cfg,
          _tcfg(max_steps=2, samples_per_epoch=8), out_dir=out)
    train(resumed, synth_sequences, desk_cfg,
          _tcfg(max_steps=4, samples_per_epoch=8),
          out_dir=out, resume=out / "checkpoint.pt")

    for (n, a), (_, b) in zip(straight.state_dict().items(),
                              resumed.state_dict().items()):
        assert torch.equal(a, b), n


def test_checkpoint_is_atomic_and_versioned(desk_cfg, synth_sequences, tmp_path):
    model = CfbtModel(desk_cfg)
    out = tmp_path / "run"
    train(model, synth_sequences, desk_cfg,
          _tcfg(max_steps=2, samples_per_epoch=4, checkpoint_every=1),
          out_dir=out)
    assert (out / "checkpoint.pt").exists()
    assert not list(out.glob("*.tmp"))
    payload = load_checkpoint(out / "checkpoint.pt")
    assert payload["format_version"] == 1
    assert payload["step"] == 2
    assert "sampler_rng" in payload and "torch_rng" in payload


def test_checkpoint_version_mismatch_rejected(desk_cfg, synth_sequences, tmp_path):
    model = CfbtModel(desk_cfg)
    out = tmp_path / "run"
    train(model, synth_sequences, desk_cfg,
          _tcfg(max_steps=1, samples_per_epoch=2), out_dir=out)
    payload = torch.load(out / "checkpoint.pt", weights_only=False)
    payload["format_version"] = 99
    torch.save(payload, out / "stale.pt")
    with pytest.raises(DataError):
        load_checkpoint(out / "stale.pt")


def test_nonfinite_loss_saves_diagnostic(desk_cfg, synth_sequences, tmp_path):
    model = CfbtModel(desk_cfg)
    with torch.no_grad():
        model.head.cls_branch[0].weight.fill_(float("nan"))
    out = tmp_path / "run"
    with pytest.raises(NumericError):
        train(model, synth_sequences, desk_cfg,
              _tcfg(max_steps=2, samples_per_epoch=4, freeze_policy="none"),
              out_dir=out)
    assert (out / "diagnostic.pt").exists()


def test_history_records_and_log_lines(desk_cfg, synth_sequences, tmp_path):
    import json

    model = CfbtModel(desk_cfg)
    out = tmp_path / "run"
    result = train(model, synth_sequences, desk_cfg,
                   _tcfg(max_steps=3, samples_per_epoch=6), out_dir=out)
    assert [r["step"] for r in result.history] == [1, 2, 3]
    for r in result.history:
        assert set(r) >= {"step", "lr", "l_cls", "l_iou", "l_1", "total"}
        assert r["lr"] == pytest.approx(1e-3)
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[-1])["step"] == 3


def test_smoothed_losses_matches_hand_ema():
    history = [{"total": 4.0}, {"total": 2.0}, {"total": 1.0}]
    # window=3 -> alpha=0.5: 4, 0.5*2+0.5*4=3, 0.5*1+0.5*3=2
    assert smoothed_losses(history, window=3) == [4.0, 3.0, 2.0]


def test_freeze_policy_none_trains_everything(desk_cfg):
    model = CfbtModel(desk_cfg)
    apply_freeze_policy(model, "none")
    assert all(p.requires_grad for p in model.parameters())
    apply_freeze_policy(model, "paper_default")
    frozen = [n for n, p in model.named_parameters() if not p.requires_grad]
    assert frozen  # backbone and head stay fixed under the default policy
