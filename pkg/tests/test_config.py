import pytest

from cfbt.config import (
    ModelConfig,
    SynthConfig,
    TrainConfig,
    desk_config,
    paper_config,
    parse_kv_text,
    split_config_mapping,
)
from cfbt.errors import ConfigurationError


def test_parse_kv_text_basics():
    text = "# comment\nembed_dim = 96\n\ndepth=12   # trailing\n"
    mapping = parse_kv_text(text)
    assert mapping == {"embed_dim": "96", "depth": "12"}


def test_parse_kv_text_rejects_duplicates():
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_kv_text("a = 1\na = 2\n")


def test_parse_kv_text_rejects_garbage():
    with pytest.raises(ConfigurationError):
        parse_kv_text("no equals sign here\n")


def test_from_mapping_rejects_unknown_key():
    with pytest.raises(ConfigurationError, match="unknown"):
        ModelConfig.from_mapping({"embed_dims": "96"})


def test_from_mapping_parses_tuples_and_bools():
    cfg = ModelConfig.from_mapping(
        {"cstaf_layers": "4,7", "cosine_window": "true"})
    assert cfg.cstaf_layers == (4, 7)
    assert cfg.cosine_window is True


def test_text_round_trip():
    cfg = desk_config()
    again = ModelConfig.from_text(cfg.to_text())
    assert again == cfg


def test_desk_token_geometry():
    cfg = desk_config()
    assert cfg.n_template == 16
    assert cfg.n_search == 64
    assert cfg.score_grid == 8
    assert cfg.fusion_width == 6
    assert cfg.ba_width == 2


def test_paper_scale_geometry():
    cfg = paper_config()
    assert cfg.embed_dim == 768
    assert cfg.n_template == 64
    assert cfg.n_search == 256
    assert cfg.ba_width == 8
    assert cfg.fusion_width == 48


def test_validate_rejects_bad_geometry():
    with pytest.raises(ConfigurationError):
        ModelConfig(embed_dim=96, num_heads=5).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(template_size=65).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(cstaf_layers=(13,)).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(down_factor=7).validate()


def test_lr_schedule_steps_down_once():
    cfg = TrainConfig(base_lr=1e-4, lr_drop_epoch=20, lr_drop_factor=10)
    assert cfg.lr_at_epoch(1) == pytest.approx(1e-4)
    assert cfg.lr_at_epoch(19) == pytest.approx(1e-4)
    assert cfg.lr_at_epoch(20) == pytest.approx(1e-4)
    assert cfg.lr_at_epoch(21) == pytest.approx(1e-5)
    assert cfg.lr_at_epoch(25) == pytest.approx(1e-5)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigurationError):
        TrainConfig(freeze_policy="everything").validate()


def test_split_mapping_routes_shared_seed():
    model_kv, train_kv, synth_kv = split_config_mapping(
        {"embed_dim": "96", "seed": "7", "batch_size": "4", "tir_blur": "3"})
    assert model_kv == {"embed_dim": "96"}
    assert train_kv == {"seed": "7", "batch_size": "4"}
    assert synth_kv == {"seed": "7", "tir_blur": "3"}


def test_split_mapping_expands_cstf_layers():
    model_kv, _, _ = split_config_mapping({"cstf_layers": "4,7"})
    assert model_kv == {"cstaf_layers": "4,7", "cstcf_layers": "4,7"}


def test_split_mapping_rejects_unknown():
    with pytest.raises(ConfigurationError, match="unknown"):
        split_config_mapping({"nonsense": "1"})


def test_synth_config_round_trip(tmp_path):
    cfg = SynthConfig(num_frames=9, distractors=0, seed=3)
    path = tmp_path / "synth.txt"
    cfg.save(path)
    assert SynthConfig.load(path) == cfg
