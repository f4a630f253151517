"""Tests for environment settings and the key=value run configuration."""

import pytest

from vessel_segmentation.config import Config
from vessel_segmentation.errors import ConfigError
from vessel_segmentation.runconfig import RunConfig, parse_config_lines


def test_defaults_follow_training_protocol(tmp_path):
    run = RunConfig.load(output_dir=tmp_path)
    assert run.net.channels == (16, 32, 64, 128)
    assert run.train.learning_rate == 0.01
    assert run.train.halving_period == 100
    assert run.train.epochs == 200
    assert run.train.momentum == 0.9
    assert run.pre.patch_size == 96
    assert run.label.band_radius == 2


def test_files_merge_left_to_right_then_overrides_then_seed(tmp_path):
    first = tmp_path / "a.conf"
    first.write_text("# base\ntrain.epochs=5\nnet.channels=8,16\n\naug.flip_prob=0.25\n")
    second = tmp_path / "b.conf"
    second.write_text("train.epochs=7\ntrain.augment=false\n")
    run = RunConfig.load(config_paths=[first, second], overrides=["train.epochs=9"], seed=42,
                         output_dir=tmp_path / "out")
    assert run.train.epochs == 9
    assert run.net.channels == (8, 16)
    assert run.aug.flip_prob == 0.25
    assert run.train.augment is False
    assert run.seed == run.train.seed == run.aug.seed == 42
    assert (tmp_path / "out").is_dir()


def test_unknown_key_names_file_and_line(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("train.epochs=3\ntrain.epochz=4\n")
    with pytest.raises(ConfigError, match=r"bad\.conf:2"):
        RunConfig.load(config_paths=[path], output_dir=tmp_path)


@pytest.mark.parametrize("override", ["nodot=1", "bogus.key=1", "train.epochs=many", "train.augment=maybe",
                                      "noequals"])
def test_malformed_overrides(tmp_path, override):
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=[override], output_dir=tmp_path)


def test_malformed_line():
    with pytest.raises(ConfigError, match="<config>:1"):
        parse_config_lines("just words\n")


def test_validation_rejects_out_of_range(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=["net.dropout=1.5"], output_dir=tmp_path)
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=["eval.stride=500"], output_dir=tmp_path)
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=["train.class_weights=1,2,x,2,4"], output_dir=tmp_path)
    with pytest.raises(ConfigError):
        RunConfig.load(overrides=["label.scheme=fancy"], output_dir=tmp_path)


def test_render_is_loadable_and_digest_is_stable(tmp_path):
    run = RunConfig.load(overrides=["train.epochs=3", "net.channels=4,8"], seed=5, output_dir=tmp_path)
    rendered = tmp_path / "resolved.conf"
    rendered.write_text(run.render())
    again = RunConfig.load(config_paths=[rendered], seed=5, output_dir=tmp_path)
    assert again.render() == run.render()
    assert again.digest() == run.digest()
    assert len(run.digest()) == 32

    other = RunConfig.load(overrides=["train.epochs=4", "net.channels=4,8"], seed=5, output_dir=tmp_path)
    assert other.digest() != run.digest()


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("VSEG_SEED", "17")
    monkeypatch.setenv("VSEG_OUTPUT_DIR", str(tmp_path / "env_out"))
    monkeypatch.setenv("VSEG_LOG_LEVEL", "debug")
    assert Config.get_default_seed() == 17
    assert Config.get_log_level() == "DEBUG"
    run = RunConfig.load()
    assert run.seed == 17
    assert run.output_dir == tmp_path / "env_out"

    monkeypatch.setenv("VSEG_SEED", "abc")
    with pytest.raises(ConfigError):
        Config.get_default_seed()
