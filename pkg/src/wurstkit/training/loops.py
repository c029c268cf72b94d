"""Per-stage training orchestration.

Stages train in reverse generation order: the VQ autoencoder (a) first,
the refiner (b) against frozen autoencoder latents, the prior (c)
against the refiner run's trained compressor. ``baseline`` is the
single-stage comparison model: the refiner architecture conditioned on
text alone. Every run writes an atomic checkpoint, a ``step,term,value``
loss CSV, and resumes from its own checkpoint bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import typing
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..compressor import CompressorConfig, SemanticCompressor, resize_bicubic
from ..diffusion import CosineSchedule
from ..stage_b import StageB, StageBConfig, train_step_b
from ..stage_c import ProbeDecoder, ProbeDecoderConfig, StageC, StageCConfig, train_step_c
from ..textcond import TextConfig, TextEncoder
from ..vqgan import (
    VQGAN,
    PatchDiscriminator,
    PerceptualNet,
    VQGANConfig,
    adv_weight_at,
    hinge_d_loss,
    maybe_drop_quantization,
    revive_dead_entries,
    stage_a_loss,
)
from .checkpoint import Checkpoint, load_checkpoint, restore_rng, rng_state, save_checkpoint
from .data import SynthSpec, build_corpus
from .optim import AdamW

STAGES = ("a", "b", "c", "baseline")
STAGE_FILES = {"a": "stage_a.ckpt", "b": "stage_b.ckpt", "c": "stage_c.ckpt", "baseline": "baseline.ckpt"}
LOSS_FILES = {s: f"loss_{s}.csv" for s in STAGES}
_STAGE_ID = {"a": 1, "b": 2, "c": 3, "baseline": 4}
FORMAT_VERSION = 1

# An optimizer paired with the checkpoint names of the parameters it owns.
OptSpec = tuple[AdamW, list[str]]


class PreconditionError(RuntimeError):
    """A required upstream artifact is missing or inconsistent."""


class TrainingDiverged(RuntimeError):
    """The loss left the finite range; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    steps: int
    batch_size: int = 32
    lr: float = 1e-4
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    seed: int = 0
    data: SynthSpec = field(default_factory=SynthSpec)
    data_seed: int = 0
    checkpoint_every: int = 0  # 0: write only the final checkpoint
    probe_steps: int = 0  # stage c only: probe-decoder phase length
    revive_every: int = 200  # stage a codebook revival cadence; 0 disables

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.warmup_steps < 0 or self.checkpoint_every < 0 or self.probe_steps < 0:
            raise ValueError("step counts must be nonnegative")


@dataclass(frozen=True)
class ModelConfigs:
    """Architecture settings for every trainable component."""

    vqgan: VQGANConfig = field(default_factory=VQGANConfig)
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    text: TextConfig = field(default_factory=TextConfig)
    stage_b: StageBConfig = field(default_factory=StageBConfig)
    stage_c: StageCConfig = field(default_factory=StageCConfig)
    probe: ProbeDecoderConfig = field(default_factory=ProbeDecoderConfig)
    baseline: StageBConfig = field(default_factory=lambda: StageBConfig(conditioning="text"))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    path: str
    history: list[tuple[int, str, float]]


def dataclass_from_dict(cls, d: dict):
    """Rebuild a config dataclass from a JSON dict.

    Lists become tuples, nested dicts recurse into dataclass fields,
    unknown keys raise.
    """
    if not isinstance(d, dict):
        raise ValueError(f"{cls.__name__} section must be an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        hint = hints.get(f.name)
        if dataclasses.is_dataclass(hint) and isinstance(v, dict):
            v = dataclass_from_dict(hint, v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# run bookkeeping


def _group_tensors(groups: dict[str, object]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for gname, module in groups.items():
        for key, arr in module.state_dict().items():
            out[f"{gname}.{key}"] = arr
    return out


def _load_group(ck: Checkpoint, gname: str, module) -> None:
    prefix = f"{gname}."
    state = {k[len(prefix) :]: v for k, v in ck.tensors.items() if k.startswith(prefix)}
    if not state:
        raise ValueError(f"checkpoint has no tensors under {prefix!r}")
    module.load_state_dict(state)


def _flat_names(groups: dict[str, object]) -> list[str]:
    return [f"{g}.{n}" for g, m in groups.items() for n, _ in m.named_parameters()]


class _StageRun:
    """Bookkeeping shared by the stage loops: CSV, checkpoints, resume."""

    def __init__(self, stage: str, cfg: TrainConfig, workdir: str):
        self.stage = stage
        self.cfg = cfg
        self.workdir = os.fspath(workdir)
        os.makedirs(self.workdir, exist_ok=True)
        self.ckpt_path = os.path.join(self.workdir, STAGE_FILES[stage])
        self.csv_path = os.path.join(self.workdir, LOSS_FILES[stage])
        self.history: list[tuple[int, str, float]] = []
        self.resumed_from: Checkpoint | None = None
        self._csv = None

    def open_csv(self, start_step: int) -> None:
        """Fresh runs truncate; resumed runs keep rows before the start step."""
        if start_step > 0 and os.path.exists(self.csv_path):
            with open(self.csv_path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
            kept = [lines[0] if lines else "step,term,value\n"]
            for line in lines[1:]:
                try:
                    if int(line.split(",", 1)[0]) < start_step:
                        kept.append(line)
                except ValueError:
                    continue
            with open(self.csv_path, "w", encoding="utf-8") as fh:
                fh.writelines(kept)
            self._csv = open(self.csv_path, "a", encoding="utf-8")
        else:
            self._csv = open(self.csv_path, "w", encoding="utf-8")
            self._csv.write("step,term,value\n")

    def emit(self, step: int, term: str, value: float) -> None:
        value = float(value)
        self.history.append((step, term, value))
        self._csv.write(f"{step},{term},{value:.10g}\n")

    def check_finite(self, step: int, terms: dict[str, float]) -> None:
        bad = {k: v for k, v in terms.items() if not math.isfinite(v)}
        if bad:
            self.close()
            raise TrainingDiverged(f"stage {self.stage} step {step}: non-finite loss terms {bad}")

    def close(self) -> None:
        if self._csv:
            self._csv.close()
            self._csv = None

    def save(
        self,
        step: int,
        rng: np.random.Generator,
        groups: dict[str, object],
        opts: dict[str, OptSpec],
        model_cfgs: dict[str, dict],
        extra_tensors: dict[str, np.ndarray] | None = None,
        extra_manifest: dict | None = None,
    ) -> Checkpoint:
        tensors = _group_tensors(groups)
        for oname, (opt, names) in opts.items():
            tensors.update(opt.state_tensors(names, prefix=f"opt.{oname}."))
        if extra_tensors:
            tensors.update(extra_tensors)
        manifest = {
            "format_version": FORMAT_VERSION,
            "kind": "wurstkit-stage",
            "stage": self.stage,
            "step": step,
            "train_config": dataclasses.asdict(self.cfg),
            "model_configs": model_cfgs,
            "data": dataclasses.asdict(self.cfg.data),
            "data_seed": self.cfg.data_seed,
            "rng": rng_state(rng),
            "opt_t": {oname: spec[0].t for oname, spec in opts.items()},
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        ck = Checkpoint(manifest=manifest, tensors=tensors)
        save_checkpoint(self.ckpt_path, ck)
        if self._csv:
            self._csv.flush()
        return ck

    def try_resume(self, groups: dict[str, object], opts: dict[str, OptSpec]):
        """Restore modules, optimizer state and RNG from an existing checkpoint.

        Returns (start_step, generator) or None when no checkpoint exists.
        """
        if not os.path.exists(self.ckpt_path):
            return None
        ck = load_checkpoint(self.ckpt_path)
        if ck.stage != self.stage:
            raise PreconditionError(f"{self.ckpt_path} holds stage {ck.stage!r}, expected {self.stage!r}")
        for gname, module in groups.items():
            _load_group(ck, gname, module)
        for oname, (opt, names) in opts.items():
            opt.load_state_tensors(names, ck.tensors, ck.manifest["opt_t"][oname], prefix=f"opt.{oname}.")
        self.resumed_from = ck
        return ck.step, restore_rng(ck.manifest["rng"])


def _require_upstream(workdir: str, stage: str) -> Checkpoint:
    path = os.path.join(os.fspath(workdir), STAGE_FILES[stage])
    if not os.path.exists(path):
        raise PreconditionError(f"missing upstream stage-{stage} checkpoint at {path}")
    return load_checkpoint(path)


def _check_same_data(ck: Checkpoint, cfg: TrainConfig) -> None:
    # Manifests pass through JSON, which turns tuples into lists; canonicalize
    # the live config the same way before comparing.
    want = json.loads(json.dumps(dataclasses.asdict(cfg.data)))
    if ck.manifest.get("data") != want or ck.manifest.get("data_seed") != cfg.data_seed:
        raise PreconditionError(
            f"upstream stage {ck.stage!r} was trained on a different dataset; "
            "all stages must share the corpus spec and data seed"
        )


def _rng_pair(cfg: TrainConfig) -> tuple[np.random.Generator, np.random.Generator]:
    sid = _STAGE_ID[cfg.stage]
    return np.random.default_rng([cfg.seed, sid, 0]), np.random.default_rng([cfg.seed, sid, 1])


def _encode_corpus(vq: VQGAN, images: np.ndarray, batch: int = 64) -> np.ndarray:
    """Frozen unquantized autoencoder latents for every corpus image."""
    outs = []
    for i in range(0, len(images), batch):
        with ad.no_grad():
            outs.append(vq.encode(images[i : i + batch]).data)
    return np.concatenate(outs, axis=0)


def resize_to(images: np.ndarray, size: int) -> np.ndarray:
    if images.shape[-1] == size and images.shape[-2] == size:
        return images
    return resize_bicubic(images, size, size)


# ---------------------------------------------------------------------------
# checkpoint -> model reconstruction


def build_vqgan_from(ck: Checkpoint) -> VQGAN:
    cfg = dataclass_from_dict(VQGANConfig, ck.manifest["model_configs"]["vqgan"])
    model = VQGAN(cfg, np.random.default_rng(0))
    _load_group(ck, "model", model)
    return model


def build_compressor_from(ck: Checkpoint) -> SemanticCompressor:
    cfg = dataclass_from_dict(CompressorConfig, ck.manifest["model_configs"]["compressor"])
    comp = SemanticCompressor(cfg, np.random.default_rng(0))
    _load_group(ck, "comp", comp)
    comp.set_training(False)
    return comp


def build_text_from(ck: Checkpoint) -> TextEncoder:
    cfg = dataclass_from_dict(TextConfig, ck.manifest["model_configs"]["text"])
    enc = TextEncoder(cfg, np.random.default_rng(0))
    _load_group(ck, "text", enc)
    return enc


def build_refiner_from(ck: Checkpoint) -> StageB:
    key = "stage_b" if "stage_b" in ck.manifest["model_configs"] else "baseline"
    cfg = dataclass_from_dict(StageBConfig, ck.manifest["model_configs"][key])
    model = StageB(cfg, np.random.default_rng(0))
    _load_group(ck, "model", model)
    return model


def build_prior_from(ck: Checkpoint) -> StageC:
    cfg = dataclass_from_dict(StageCConfig, ck.manifest["model_configs"]["stage_c"])
    model = StageC(cfg, np.random.default_rng(0))
    _load_group(ck, "model", model)
    return model


def build_probe_from(ck: Checkpoint) -> ProbeDecoder | None:
    if not any(k.startswith("probe.") for k in ck.tensors):
        return None
    cfg = dataclass_from_dict(ProbeDecoderConfig, ck.manifest["model_configs"]["probe"])
    probe = ProbeDecoder(cfg, np.random.default_rng(0))
    _load_group(ck, "probe", probe)
    return probe


# ---------------------------------------------------------------------------
# stage loops


def _run_stage_a(cfg: TrainConfig, models: ModelConfigs, workdir: str) -> TrainResult:
    vq_cfg = models.vqgan
    corpus = build_corpus(cfg.data, cfg.data_seed)
    init_rng, loop_rng = _rng_pair(cfg)
    model = VQGAN(vq_cfg, init_rng)
    disc = PatchDiscriminator(init_rng)
    perc = PerceptualNet()
    opt = AdamW(model.parameters(), lr=cfg.lr, warmup_steps=cfg.warmup_steps, weight_decay=cfg.weight_decay)
    dopt = AdamW(disc.parameters(), lr=cfg.lr, warmup_steps=cfg.warmup_steps, weight_decay=cfg.weight_decay)
    usage = np.zeros(vq_cfg.codebook_size, dtype=np.float32)

    run = _StageRun("a", cfg, workdir)
    groups = {"model": model, "disc": disc}
    opts: dict[str, OptSpec] = {
        "main": (opt, [f"model.{n}" for n, _ in model.named_parameters()]),
        "disc": (dopt, [f"disc.{n}" for n, _ in disc.named_parameters()]),
    }
    model_cfgs = {"vqgan": dataclasses.asdict(vq_cfg)}
    start = 0
    resumed = run.try_resume(groups, opts)
    if resumed is not None:
        start, loop_rng = resumed
        if "aux.codebook_usage" in run.resumed_from.tensors:
            usage = run.resumed_from.tensors["aux.codebook_usage"].astype(np.float32)
    run.open_csv(start)

    def checkpoint(step: int) -> Checkpoint:
        return run.save(step, loop_rng, groups, opts, model_cfgs, extra_tensors={"aux.codebook_usage": usage})

    ck = run.resumed_from
    try:
        for step in range(start, cfg.steps):
            idx = loop_rng.integers(0, len(corpus), size=cfg.batch_size)
            x = corpus.images[idx]
            lat = model.encode(x)
            if maybe_drop_quantization(loop_rng, vq_cfg.quant_dropout):
                dec_in, vq_terms = lat, None
            else:
                tokens, zq, cb_loss, commit = model.quantize_st(lat)
                usage += np.bincount(tokens.reshape(-1), minlength=vq_cfg.codebook_size).astype(np.float32)
                dec_in, vq_terms = zq, (cb_loss, commit)
            recon = model.decode_train(dec_in)
            w_adv = adv_weight_at(step, vq_cfg)
            logits_fake = disc(recon) if w_adv > 0.0 else None
            losses = stage_a_loss(x, recon, step, vq_cfg, perceptual_net=perc, logits_fake=logits_fake)
            total = losses["total"]
            if vq_terms is not None:
                total = total + vq_terms[0] + vq_terms[1]
            terms = {
                "total": float(total.data),
                "mse": float(losses["mse"].data),
                "perc": float(losses["perc"].data),
            }
            if vq_terms is not None:
                terms["vq"] = float(vq_terms[0].data) + float(vq_terms[1].data)
            run.check_finite(step, terms)
            model.zero_grad()
            total.backward()
            opt.step()
            model.zero_grad()

            if w_adv > 0.0:
                disc.zero_grad()  # generator pass left gradients in the critic
                d_loss = hinge_d_loss(disc(x), disc(recon.detach()))
                terms["d_loss"] = float(d_loss.data)
                terms["adv"] = float(losses["adv"].data)
                run.check_finite(step, {"d_loss": terms["d_loss"]})
                d_loss.backward()
                dopt.step()
                disc.zero_grad()

            for term, value in terms.items():
                run.emit(step, term, value)

            if cfg.revive_every and (step + 1) % cfg.revive_every == 0:
                vectors = lat.data.transpose(0, 2, 3, 1).reshape(-1, vq_cfg.z)
                revive_dead_entries(model.codebook, usage.astype(np.int64), vectors, loop_rng)
                usage[:] = 0.0
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.steps:
                ck = checkpoint(step + 1)
        if start < cfg.steps or ck is None:
            ck = checkpoint(cfg.steps)
    finally:
        run.close()
    return TrainResult(checkpoint=ck, path=run.ckpt_path, history=run.history)


def _run_refiner(cfg: TrainConfig, models: ModelConfigs, workdir: str, stage: str) -> TrainResult:
    """Shared loop for stage b and the text-only baseline."""
    b_cfg = models.stage_b if stage == "b" else models.baseline
    a_ck = _require_upstream(workdir, "a")
    _check_same_data(a_ck, cfg)
    vq = build_vqgan_from(a_ck)
    corpus = build_corpus(cfg.data, cfg.data_seed)
    latents = _encode_corpus(vq, corpus.images)
    # Diffusion assumes roughly unit-scale data; fold the observed latent
    # spread into a fixed scale recorded alongside the weights.
    latent_scale = float(1.0 / max(float(latents.std()), 1e-8))
    latents = (latents * latent_scale).astype(np.float32)

    init_rng, loop_rng = _rng_pair(cfg)
    model = StageB(b_cfg, init_rng)
    text = TextEncoder(models.text, init_rng)
    groups: dict[str, object] = {"model": model, "text": text}
    comp = None
    if b_cfg.uses_semantic:
        comp = SemanticCompressor(models.compressor, init_rng)
        comp.set_training(True)
        groups["comp"] = comp
    opt = AdamW(
        [p for g in groups.values() for p in g.parameters()],
        lr=cfg.lr,
        warmup_steps=cfg.warmup_steps,
        weight_decay=cfg.weight_decay,
    )
    opts: dict[str, OptSpec] = {"main": (opt, _flat_names(groups))}
    schedule = CosineSchedule()

    run = _StageRun(stage, cfg, workdir)
    model_cfgs = {
        ("stage_b" if stage == "b" else "baseline"): dataclasses.asdict(b_cfg),
        "text": dataclasses.asdict(models.text),
    }
    if comp is not None:
        model_cfgs["compressor"] = dataclasses.asdict(models.compressor)
    extra_manifest = {"latent_scale": latent_scale, "upstream": {"a": STAGE_FILES["a"]}}
    comp_size = models.compressor.input_size

    start = 0
    resumed = run.try_resume(groups, opts)
    if resumed is not None:
        start, loop_rng = resumed
    run.open_csv(start)

    def checkpoint(step: int) -> Checkpoint:
        return run.save(step, loop_rng, groups, opts, model_cfgs, extra_manifest=extra_manifest)

    ck = run.resumed_from
    try:
        for step in range(start, cfg.steps):
            idx = loop_rng.integers(0, len(corpus), size=cfg.batch_size)
            caps = [corpus.captions[i] for i in idx]
            comp_px = resize_to(corpus.images[idx], comp_size) if comp is not None else None
            out = train_step_b(model, comp, text, latents[idx], comp_px, caps, loop_rng, schedule)
            value = float(out["loss"].data)
            run.check_finite(step, {"loss": value})
            opt.zero_grad()
            out["loss"].backward()
            opt.step()
            opt.zero_grad()
            run.emit(step, "loss", value)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.steps:
                ck = checkpoint(step + 1)
        if start < cfg.steps or ck is None:
            ck = checkpoint(cfg.steps)
    finally:
        run.close()
    return TrainResult(checkpoint=ck, path=run.ckpt_path, history=run.history)


class _ScaledCompressor:
    """Fixed gain on compressor outputs.

    The prior samples from N(0, I), so it trains on latents brought to
    roughly unit spread; the gain is recorded in the checkpoint and undone
    when handing latents to consumers that expect the raw space.
    """

    def __init__(self, comp: SemanticCompressor, scale: float):
        self.comp = comp
        self.scale = scale

    @property
    def cfg(self) -> CompressorConfig:
        return self.comp.cfg

    def __call__(self, pixels):
        return self.comp(pixels) * self.scale


def _semantic_std(comp: SemanticCompressor, images: np.ndarray, size: int, batch: int = 64) -> float:
    sq_sum = 0.0
    mean_sum = 0.0
    n = 0
    with ad.no_grad():
        for i in range(0, len(images), batch):
            z = comp(resize_to(images[i : i + batch], size)).data.astype(np.float64)
            sq_sum += float((z * z).sum())
            mean_sum += float(z.sum())
            n += z.size
    mean = mean_sum / n
    return math.sqrt(max(sq_sum / n - mean * mean, 0.0))


def _run_stage_c(cfg: TrainConfig, models: ModelConfigs, workdir: str) -> TrainResult:
    b_ck = _require_upstream(workdir, "b")
    _check_same_data(b_ck, cfg)
    comp = build_compressor_from(b_ck)
    corpus = build_corpus(cfg.data, cfg.data_seed)
    sc_scale = float(1.0 / max(_semantic_std(comp, corpus.images, comp.cfg.input_size), 1e-8))
    train_comp = _ScaledCompressor(comp, sc_scale)
    init_rng, loop_rng = _rng_pair(cfg)
    model = StageC(models.stage_c, init_rng)
    text = TextEncoder(models.text, init_rng)
    probe = ProbeDecoder(models.probe, init_rng)
    groups: dict[str, object] = {"model": model, "text": text}
    opt = AdamW(
        [p for g in groups.values() for p in g.parameters()],
        lr=cfg.lr,
        warmup_steps=cfg.warmup_steps,
        weight_decay=cfg.weight_decay,
    )
    probe_warmup = min(cfg.warmup_steps, max(1, cfg.probe_steps // 10)) if cfg.probe_steps else 0
    popt = AdamW(probe.parameters(), lr=cfg.lr, warmup_steps=probe_warmup, weight_decay=cfg.weight_decay)
    opts: dict[str, OptSpec] = {"main": (opt, _flat_names(groups))}
    probe_names = [f"probe.{n}" for n, _ in probe.named_parameters()]
    schedule = CosineSchedule()
    comp_size = comp.cfg.input_size

    run = _StageRun("c", cfg, workdir)
    model_cfgs = {
        "stage_c": dataclasses.asdict(models.stage_c),
        "text": dataclasses.asdict(models.text),
        "probe": dataclasses.asdict(models.probe),
        "compressor": dataclasses.asdict(comp.cfg),
    }
    extra_manifest: dict = {"sc_scale": sc_scale, "upstream": {"b": STAGE_FILES["b"]}}

    start = 0
    probe_done = 0
    resumed = run.try_resume(groups, opts)
    if resumed is not None:
        start, loop_rng = resumed
        ck0 = run.resumed_from
        if any(k.startswith("probe.") for k in ck0.tensors):
            _load_group(ck0, "probe", probe)
            popt.load_state_tensors(probe_names, ck0.tensors, ck0.manifest["opt_t"].get("probe", 0), prefix="opt.probe.")
            probe_done = int(ck0.manifest.get("probe_step", 0))
    run.open_csv(start)

    def checkpoint(step: int, with_probe: bool, probe_step: int) -> Checkpoint:
        groups_out = dict(groups)
        opts_out = dict(opts)
        extra = dict(extra_manifest)
        if with_probe:
            groups_out["probe"] = probe
            opts_out["probe"] = (popt, probe_names)
            extra["probe_step"] = probe_step
        return run.save(step, loop_rng, groups_out, opts_out, model_cfgs, extra_manifest=extra)

    ck = run.resumed_from
    try:
        for step in range(start, cfg.steps):
            idx = loop_rng.integers(0, len(corpus), size=cfg.batch_size)
            caps = [corpus.captions[i] for i in idx]
            comp_px = resize_to(corpus.images[idx], comp_size)
            out = train_step_c(model, train_comp, text, comp_px, caps, loop_rng, schedule)
            value = float(out["loss"].data)
            run.check_finite(step, {"loss": value})
            opt.zero_grad()
            out["loss"].backward()
            opt.step()
            opt.zero_grad()
            run.emit(step, "loss", value)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.steps:
                ck = checkpoint(step + 1, with_probe=False, probe_step=0)

        # Auxiliary phase: a small decoder imaging compressor latents
        # directly, trained supervised against the source pixels.
        for pstep in range(probe_done, cfg.probe_steps):
            idx = loop_rng.integers(0, len(corpus), size=cfg.batch_size)
            comp_px = resize_to(corpus.images[idx], comp_size)
            with ad.no_grad():
                c_sc = comp(comp_px).data
            loss = nn.mse(probe.forward_train(c_sc), corpus.images[idx])
            value = float(loss.data)
            run.check_finite(cfg.steps + pstep, {"probe": value})
            popt.zero_grad()
            loss.backward()
            popt.step()
            popt.zero_grad()
            run.emit(cfg.steps + pstep, "probe", value)
        if start < cfg.steps or probe_done < cfg.probe_steps or ck is None:
            ck = checkpoint(cfg.steps, with_probe=cfg.probe_steps > 0, probe_step=cfg.probe_steps)
    finally:
        run.close()
    return TrainResult(checkpoint=ck, path=run.ckpt_path, history=run.history)


def run_training(stage: str, cfg: TrainConfig, workdir: str, models: ModelConfigs | None = None) -> TrainResult:
    """Train one stage inside ``workdir``; resumes from its checkpoint if present.

    Raises PreconditionError when a required upstream checkpoint is
    absent and TrainingDiverged on a non-finite loss.
    """
    if cfg.stage != stage:
        raise ValueError(f"config is for stage {cfg.stage!r}, not {stage!r}")
    models = models or ModelConfigs()
    if stage == "a":
        return _run_stage_a(cfg, models, workdir)
    if stage in ("b", "baseline"):
        return _run_refiner(cfg, models, workdir, stage)
    return _run_stage_c(cfg, models, workdir)
