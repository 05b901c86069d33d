from pathlib import Path

import pytest

from disco.config import ExperimentConfig, config_digest, load_config, parse_override, save_config
from disco.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults():
    cfg = load_config()
    assert cfg == ExperimentConfig()
    assert cfg.train.objective == "disco-random"
    assert cfg.decode.algorithm == "easy-first"


def test_yaml_then_overrides():
    cfg = load_config(CONFIGS / "tiny.yaml", ["train.max_steps=7", "decode.algorithm=mask-predict", "seed=9"])
    assert cfg.data.task == "copy" and cfg.model.model_dim == 8
    assert cfg.train.max_steps == 7
    assert cfg.decode.algorithm == "mask-predict"
    assert cfg.seed == 9


def test_float_fields_accept_exponent_strings(tmp_path):
    path = tmp_path / "lr.yaml"
    path.write_text("train:\n  peak_lr: 1e-4\n", encoding="utf-8")
    assert load_config(path).train.peak_lr == pytest.approx(1e-4)


def test_parse_override():
    assert parse_override("model.dropout=0.2") == {"model": {"dropout": 0.2}}
    assert parse_override("run_dir=out") == {"run_dir": "out"}


@pytest.mark.parametrize("override", [
    "model.num_heads=3",        # 64 not divisible by 3
    "model.bogus=1",
    "nosection.key=1",
    "train.max_steps=many",
    "train.save_checkpoints=1",
    "data.task=translate",
    "model",
    "a.b.c=1",
])
def test_rejected(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [1, 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)


def test_save_and_reload(tmp_path):
    cfg = load_config(CONFIGS / "desk.yaml", ["train.betas=[0.8, 0.98]"])
    path = save_config(cfg, tmp_path / "config.yaml")
    again = load_config(path)
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_digest_tracks_content():
    assert config_digest(load_config()) == config_digest(load_config())
    assert config_digest(load_config()) != config_digest(load_config(overrides=["seed=2"]))


def test_model_for_fills_vocabularies():
    cfg = load_config(CONFIGS / "tiny.yaml")
    model_cfg = cfg.model_for(13, 11)
    assert (model_cfg.vocab_size_src, model_cfg.vocab_size_tgt) == (13, 11)
    assert model_cfg.max_length_bins <= model_cfg.max_positions
