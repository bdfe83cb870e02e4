"""
EventAttn - Test Fixtures
小尺寸合成配置与模型配置
"""

import logging

import numpy as np
import pytest

from features import SynthConfig, synth_dataset
from model import ModelConfig

ALL_MODES = ("frame-only", "only-player", "avg-player", "attn-no-track", "attn-track")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING, logger="eventattn")


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(
        num_classes=3, num_frames=6, min_players=2, max_players=3,
        d_app=6, d_frame=5, levels=(2, 1), active_window=(1, 5),
        noise_sigma=0.05, empty_frame_prob=0.0, num_clips=12, seed=0,
    )


@pytest.fixture
def tiny_clips(tiny_synth):
    return synth_dataset(tiny_synth)


def make_model_config(synth: SynthConfig, mode: str = "attn-no-track", **overrides) -> ModelConfig:
    settings = dict(hidden_dim=3, embed_dim=4, phi_hidden=3, mode=mode)
    settings.update(overrides)
    negative_class = settings.pop("negative_class", False)
    return ModelConfig(**settings).bind(synth.header(), negative_class=negative_class)


@pytest.fixture
def model_config(tiny_synth):
    def make(mode: str = "attn-no-track", **overrides) -> ModelConfig:
        return make_model_config(tiny_synth, mode, **overrides)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
