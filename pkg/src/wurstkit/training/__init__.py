"""Training harness: data, optimizer, checkpoints, per-stage loops."""

from .checkpoint import (
    Checkpoint,
    interpolate_weights,
    load_checkpoint,
    restore_rng,
    rng_state,
    save_checkpoint,
)
from .data import Corpus, SynthSpec, build_corpus, read_manifest, synth_dataset
from .loops import (
    LOSS_FILES,
    STAGE_FILES,
    STAGES,
    ModelConfigs,
    PreconditionError,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    run_training,
)
from .optim import AdamW, warmup_lr

__all__ = [
    "AdamW",
    "Checkpoint",
    "Corpus",
    "LOSS_FILES",
    "ModelConfigs",
    "PreconditionError",
    "STAGES",
    "STAGE_FILES",
    "SynthSpec",
    "TrainConfig",
    "TrainingDiverged",
    "TrainResult",
    "build_corpus",
    "interpolate_weights",
    "load_checkpoint",
    "read_manifest",
    "restore_rng",
    "rng_state",
    "run_training",
    "save_checkpoint",
    "synth_dataset",
    "warmup_lr",
]
