"""Shared micro-scale fixtures: tiny model configs and a trained chain."""

import pytest

from wurstkit.compressor import CompressorConfig
from wurstkit.stage_b import StageBConfig
from wurstkit.stage_c import ProbeDecoderConfig, StageCConfig
from wurstkit.textcond import TextConfig
from wurstkit.training import ModelConfigs, SynthSpec, TrainConfig, run_training
from wurstkit.vqgan import VQGANConfig

MICRO_DATA = SynthSpec(count=48, image_size=32)
MICRO_MODELS = ModelConfigs(
    vqgan=VQGANConfig(widths=(8, 12), enc_blocks=(1, 1), dec_blocks=(1, 1), codebook_size=32),
    compressor=CompressorConfig(input_size=64, widths=(4, 6, 8, 10, 12)),
    text=TextConfig(vocab_size=256, l_max=8, d_text=8),
    stage_b=StageBConfig(widths=(8, 12), blocks=(1, 1), heads=(0, 2), csc_hw=2, d_text=8, t_dim=8),
    stage_c=StageCConfig(blocks=1, width=16, heads=2, d_text=8),
    probe=ProbeDecoderConfig(stages=4, width_start=8),
    baseline=StageBConfig(widths=(8, 12), blocks=(1, 1), heads=(0, 2), d_text=8, t_dim=8, conditioning="text"),
)


def micro_cfg(stage: str, steps: int, **kw) -> TrainConfig:
    defaults = dict(batch_size=4, warmup_steps=2, seed=1, data=MICRO_DATA, data_seed=3, revive_every=3)
    defaults.update(kw)
    return TrainConfig(stage=stage, steps=steps, **defaults)


@pytest.fixture(scope="session")
def micro_chain(tmp_path_factory):
    """One micro run of the full stage chain plus the text-only baseline."""
    work = tmp_path_factory.mktemp("micro_chain")
    run_training("a", micro_cfg("a", 6), work, MICRO_MODELS)
    run_training("b", micro_cfg("b", 4), work, MICRO_MODELS)
    run_training("c", micro_cfg("c", 3, probe_steps=3), work, MICRO_MODELS)
    run_training("baseline", micro_cfg("baseline", 3), work, MICRO_MODELS)
    return work
