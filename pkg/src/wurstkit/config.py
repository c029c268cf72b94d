"""Run configuration: one JSON document describing a whole experiment.

The file has ten sections (shapes, schedule, stage_a, compressor, text,
stage_b, stage_c, sampler, train, eval); every field is optional and
falls back to the desk-scale defaults below. Unknown keys anywhere are
rejected so typos fail loudly, and a ``schema`` integer guards against
reading files written for a different layout.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .compressor import CompressorConfig
from .evalkit import ExtractorConfig
from .pipeline import SamplerConfig
from .stage_b import StageBConfig
from .stage_c import ProbeDecoderConfig, StageCConfig
from .textcond import TextConfig
from .training import ModelConfigs, SynthSpec, TrainConfig
from .training.loops import dataclass_from_dict
from .vqgan import VQGANConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScheduleSettings:
    """Cosine noise-schedule shape."""

    s: float = 0.008

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("schedule offset must be positive")


@dataclass(frozen=True)
class StageCSection:
    """Prior network plus the standalone probe decoder."""

    prior: StageCConfig = field(default_factory=StageCConfig)
    probe: ProbeDecoderConfig = field(default_factory=ProbeDecoderConfig)


@dataclass(frozen=True)
class TrainSettings:
    """Shared optimization knobs and per-stage step budgets."""

    steps_a: int = 3000
    steps_b: int = 5000
    steps_c: int = 5000
    steps_baseline: int = 5000
    probe_steps: int = 1500
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.01
    seed: int = 0
    data_seed: int = 0
    checkpoint_every: int = 500
    revive_every: int = 200

    def __post_init__(self):
        for name in ("steps_a", "steps_b", "steps_c", "steps_baseline"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class EvalSettings:
    """Sample counts, seeds and the metric extractor recipe."""

    sample_count: int = 256
    audit_count: int = 1000
    dominance_count: int = 64
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    extractor_data_seed: int = 777
    seed: int = 0

    def __post_init__(self):
        if min(self.sample_count, self.audit_count, self.dominance_count) < 1:
            raise ValueError("evaluation counts must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs, with desk-scale defaults."""

    schema: int = SCHEMA_VERSION
    shapes: SynthSpec = field(default_factory=SynthSpec)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    stage_a: VQGANConfig = field(default_factory=VQGANConfig)
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    text: TextConfig = field(default_factory=TextConfig)
    stage_b: StageBConfig = field(default_factory=StageBConfig)
    stage_c: StageCSection = field(default_factory=StageCSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ValueError(
                f"config schema {self.schema} not supported; this build reads schema {SCHEMA_VERSION}"
            )


def parse_run_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknowns."""
    return dataclass_from_dict(RunConfig, doc)


def load_run_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_run_config(doc)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def model_configs(cfg: RunConfig) -> ModelConfigs:
    """Architecture bundle for the training loops.

    The text-only baseline reuses the Stage B architecture so that the
    comparison isolates the conditioning pathway.
    """
    return ModelConfigs(
        vqgan=cfg.stage_a,
        compressor=cfg.compressor,
        text=cfg.text,
        stage_b=cfg.stage_b,
        stage_c=cfg.stage_c.prior,
        probe=cfg.stage_c.probe,
        baseline=dataclasses.replace(cfg.stage_b, conditioning="text"),
    )


_STAGE_STEPS = {"a": "steps_a", "b": "steps_b", "c": "steps_c", "baseline": "steps_baseline"}


def train_config(cfg: RunConfig, stage: str, **overrides) -> TrainConfig:
    """Per-stage TrainConfig from the shared train section.

    ``overrides`` win over the file; unknown override names raise via the
    TrainConfig constructor.
    """
    if stage not in _STAGE_STEPS:
        raise ValueError(f"stage must be one of {sorted(_STAGE_STEPS)}, got {stage!r}")
    t = cfg.train
    settings = dict(
        stage=stage,
        steps=getattr(t, _STAGE_STEPS[stage]),
        batch_size=t.batch_size,
        lr=t.lr,
        warmup_steps=t.warmup_steps,
        weight_decay=t.weight_decay,
        seed=t.seed,
        data=cfg.shapes,
        data_seed=t.data_seed,
        checkpoint_every=t.checkpoint_every,
        probe_steps=t.probe_steps if stage == "c" else 0,
        revive_every=t.revive_every,
    )
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**settings)
