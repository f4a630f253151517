"""Shared fixtures: a micro network, a tiny synthetic corpus and a run factory."""

import numpy as np
import pytest

from vessel_segmentation.network import NetConfig, init_params
from vessel_segmentation.runconfig import RunConfig
from vessel_segmentation.synthetic import generate_corpus

MICRO_OVERRIDES = [
    "net.channels=4,8",
    "net.dropout=0.0",
    "pre.patch_size=32",
    "pre.clahe_tiles=2,2",
    "train.patch_stride=32",
    "train.epochs=2",
    "train.halving_period=1",
    "train.batch_size=4",
    "train.checkpoint_every=1",
    "eval.stride=16",
    "eval.batch_size=4",
]


@pytest.fixture
def micro_cfg():
    return NetConfig(channels=(4, 8), dropout=0.0)


@pytest.fixture
def micro_params(micro_cfg):
    return init_params(micro_cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Six 64x64 synthetic images, four tagged train and two test."""
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, count=6, size=64, n_train=4, seed=7)
    return root / "manifest.csv"


@pytest.fixture
def make_run(tmp_path):
    """RunConfig with the micro overrides; extra overrides are appended."""
    def factory(*extra, manifest=None, subcommand="test", seed=0, output_dir=None):
        return RunConfig.load(
            subcommand=subcommand,
            overrides=MICRO_OVERRIDES + list(extra),
            seed=seed,
            manifest=manifest,
            output_dir=output_dir or tmp_path / "run",
        )
    return factory
