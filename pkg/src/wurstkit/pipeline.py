"""Text-to-image sampling across the trained stage chain.

A generation runs three phases back to back: the prior denoises a
semantic latent from pure noise under text guidance, the refiner
denoises a quantizer-space latent from random codebook tokens under
text plus that semantic latent, and the autoencoder decodes the result
to pixels. A text-only bundle skips the prior and conditions the
refiner on captions alone.

Every random draw comes from per-phase streams derived from the one
seed in :class:`SamplerConfig`, so a generation is bit-stable and the
prior phase alone reproduces exactly what a full generation would feed
downstream.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .compressor import SEMANTIC_CHANNELS, SemanticCompressor
from .diffusion import CosineSchedule, ScheduleGrid, ab_to_epsilon, cfg_combine, ddpm_step
from .stage_b import StageB
from .stage_c import ProbeDecoder, StageC
from .textcond import TextEncoder
from .training.checkpoint import Checkpoint, atomic_write_bytes, load_checkpoint
from .training.data import save_png
from .training.loops import (
    STAGE_FILES,
    PreconditionError,
    build_compressor_from,
    build_probe_from,
    build_prior_from,
    build_refiner_from,
    build_text_from,
    build_vqgan_from,
)
from .vqgan import VQGAN

# Per-phase rng streams under the user seed.
_STREAM_PRIOR = 11
_STREAM_REFINER = 12


@dataclass(frozen=True)
class SamplerConfig:
    """Step counts and guidance scales for the two denoising loops.

    ``rescale_token_init`` divides the token-initialized refiner state by
    its standard deviation; the reverse process expects roughly
    unit-variance input while raw codebook rows carry an arbitrary
    spread.
    """

    tau_c: int = 60
    tau_b: int = 12
    guidance_c: float = 4.0
    guidance_b: float = 4.0
    seed: int = 0
    rescale_token_init: bool = True

    def __post_init__(self):
        if self.tau_c < 1 or self.tau_b < 1:
            raise ValueError("step counts must be >= 1")
        if self.guidance_c < 0 or self.guidance_b < 0:
            raise ValueError("guidance scales must be >= 0")


def new_eval_counts() -> dict[str, int]:
    """Fresh per-phase counter of denoiser forward passes."""
    return {"stage_c": 0, "stage_b": 0}


def _guided_eps(cond_fn, null_fn, w: float, counts: dict[str, int], key: str) -> np.ndarray:
    # w in {0, 1} collapses the guidance mix to a single model evaluation.
    if w == 0.0:
        counts[key] += 1
        return null_fn()
    if w == 1.0:
        counts[key] += 1
        return cond_fn()
    counts[key] += 2
    return cfg_combine(null_fn(), cond_fn(), w)


def init_stage_b_latents(
    codebook: np.ndarray,
    shape: tuple[int, int, int],
    rng: np.random.Generator,
    rescale: bool = True,
) -> np.ndarray:
    """Stack uniformly drawn codebook rows into a (z, h, w) latent.

    With ``rescale`` the result is divided by its global standard
    deviation; a spread below 1e-6 (a single-entry codebook, say) leaves
    the rows untouched.
    """
    z, h, w = shape
    k, zc = codebook.shape
    if zc != z:
        raise ValueError(f"codebook entries have {zc} channels, latent wants {z}")
    tokens = rng.integers(0, k, size=(h, w))
    lat = np.ascontiguousarray(codebook[tokens].transpose(2, 0, 1)).astype(np.float32)
    if rescale:
        std = float(lat.std())
        if std > 1e-6:
            lat = lat / std
    return lat


@dataclass
class GenerationResult:
    """One generated image plus its provenance record."""

    image: np.ndarray
    record: dict

    def write(self, out_dir: str | os.PathLike, stem: str) -> tuple[str, str]:
        """Save ``{stem}.png`` and ``{stem}.json`` under ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        png_path = os.path.join(os.fspath(out_dir), f"{stem}.png")
        rec_path = os.path.join(os.fspath(out_dir), f"{stem}.json")
        save_png(png_path, self.image)
        payload = json.dumps(self.record, indent=2, sort_keys=True).encode() + b"\n"
        atomic_write_bytes(rec_path, payload)
        return png_path, rec_path


@dataclass
class Pipeline:
    """Trained sampling bundle.

    ``latent_scale`` maps quantizer-space latents into the unit-scale
    space the refiner was trained in; ``sc_scale`` does the same for the
    prior over compressor latents. Both loops run scaled and the public
    outputs are mapped back, so consumers only ever see the raw spaces.
    """

    vqgan: VQGAN
    refiner: StageB
    text_b: TextEncoder
    latent_scale: float
    image_size: int
    compressor: SemanticCompressor | None = None
    prior: StageC | None = None
    text_c: TextEncoder | None = None
    probe: ProbeDecoder | None = None
    sc_scale: float = 1.0
    schedule: CosineSchedule = field(default_factory=CosineSchedule)

    # -- loading ---------------------------------------------------------

    @classmethod
    def from_workdir(cls, workdir: str | os.PathLike) -> "Pipeline":
        """Load the full cascade from a training directory."""
        a_ck = _load_stage(workdir, "a")
        b_ck = _load_stage(workdir, "b")
        c_ck = _load_stage(workdir, "c")
        comp = build_compressor_from(b_ck)
        pipe = cls(
            vqgan=build_vqgan_from(a_ck),
            refiner=build_refiner_from(b_ck),
            text_b=build_text_from(b_ck),
            latent_scale=float(b_ck.manifest["latent_scale"]),
            image_size=_image_size_of(a_ck),
            compressor=comp,
            prior=build_prior_from(c_ck),
            text_c=build_text_from(c_ck),
            probe=build_probe_from(c_ck),
            sc_scale=float(c_ck.manifest["sc_scale"]),
        )
        pipe._check_geometry()
        return pipe

    @classmethod
    def baseline_from_workdir(cls, workdir: str | os.PathLike) -> "Pipeline":
        """Load the text-only comparison bundle (no prior, no compressor)."""
        a_ck = _load_stage(workdir, "a")
        base_ck = _load_stage(workdir, "baseline")
        pipe = cls(
            vqgan=build_vqgan_from(a_ck),
            refiner=build_refiner_from(base_ck),
            text_b=build_text_from(base_ck),
            latent_scale=float(base_ck.manifest["latent_scale"]),
            image_size=_image_size_of(a_ck),
        )
        pipe._check_geometry()
        return pipe

    def _check_geometry(self) -> None:
        if self.image_size % 4:
            raise ValueError("image size must divide by the autoencoder stride 4")
        if self.refiner.cfg.uses_semantic:
            if self.compressor is None:
                raise PreconditionError("refiner wants semantic conditioning but no compressor is loaded")
            if self.refiner.cfg.csc_hw != self.semantic_hw:
                raise ValueError(
                    f"refiner expects a {self.refiner.cfg.csc_hw}^2 semantic grid, "
                    f"compressor produces {self.semantic_hw}^2"
                )

    # -- geometry --------------------------------------------------------

    @property
    def is_baseline(self) -> bool:
        return self.prior is None

    @property
    def latent_hw(self) -> int:
        return self.image_size // 4

    @property
    def semantic_hw(self) -> int:
        if self.compressor is None:
            raise PreconditionError("this bundle carries no compressor")
        return self.compressor.cfg.input_size // 32

    # -- stage samplers --------------------------------------------------

    def sample_stage_c(
        self,
        prompt: str,
        cfg: SamplerConfig,
        counts: dict[str, int] | None = None,
    ) -> np.ndarray:
        """Denoise a (16, h, w) semantic latent from noise under ``prompt``.

        The loop runs in the prior's unit-scale training space; the
        return value is mapped back to the compressor's latent space.
        """
        return self.sample_stage_c_batch([prompt], cfg, counts)[0]

    def sample_stage_c_batch(
        self,
        prompts: list[str],
        cfg: SamplerConfig,
        counts: dict[str, int] | None = None,
    ) -> np.ndarray:
        """Denoise (n, 16, h, w) semantic latents from noise, one per prompt.

        The whole batch shares one noise stream and one schedule walk, so
        a call is reproducible as a unit; row i is not the same draw as a
        single-prompt call unless n == 1.
        """
        if self.prior is None:
            raise PreconditionError("this bundle has no prior stage")
        if len(prompts) == 0:
            raise ValueError("prompts must be non-empty")
        counts = counts if counts is not None else new_eval_counts()
        rng = np.random.default_rng([cfg.seed, _STREAM_PRIOR])
        hw = self.semantic_hw
        grid = ScheduleGrid(self.schedule, cfg.tau_c)
        x = rng.standard_normal((len(prompts), SEMANTIC_CHANNELS, hw, hw)).astype(np.float32)
        emb = self.text_c.encode(list(prompts))
        null = self.text_c.null_embedding(len(prompts))
        with ad.no_grad():
            for i in range(cfg.tau_c, 0, -1):
                t = float(grid.ts[i])

                def eps_at(e):
                    a, bb = self.prior(x, e, t)
                    return ab_to_epsilon(x, a.data, bb.data)

                eps = _guided_eps(lambda: eps_at(emb), lambda: eps_at(null), cfg.guidance_c, counts, "stage_c")
                noise = rng.standard_normal(x.shape) if i > 1 else None
                x = np.asarray(ddpm_step(x, eps, i, grid, noise), dtype=np.float32)
        return (x / self.sc_scale).astype(np.float32)

    def sample_stage_b(
        self,
        c_sc: np.ndarray | None,
        prompt: str,
        cfg: SamplerConfig,
        counts: dict[str, int] | None = None,
    ) -> np.ndarray:
        """Denoise a (4, h, w) quantizer-space latent from random tokens.

        ``c_sc`` is a compressor-space semantic latent (required unless
        this is a text-only refiner). Guidance swaps the caption for the
        learned null embedding; the semantic latent rides along in both
        passes. The return value is in the raw quantizer space, ready
        for pixel decoding.
        """
        batch = None if c_sc is None else np.asarray(c_sc, dtype=np.float32)[None]
        return self.sample_stage_b_batch(batch, [prompt], cfg, counts)[0]

    def sample_stage_b_batch(
        self,
        c_sc: np.ndarray | None,
        prompts: list[str],
        cfg: SamplerConfig,
        counts: dict[str, int] | None = None,
    ) -> np.ndarray:
        """Batched refiner sampling: (n, 16, h, w) semantics to (n, 4, h, w)."""
        if len(prompts) == 0:
            raise ValueError("prompts must be non-empty")
        counts = counts if counts is not None else new_eval_counts()
        cond_sc = self._conditioning_batch(c_sc, len(prompts))
        rng = np.random.default_rng([cfg.seed, _STREAM_REFINER])
        hw = self.latent_hw
        z = self.refiner.cfg.latent_channels
        grid = ScheduleGrid(self.schedule, cfg.tau_b)
        x = np.stack(
            [
                init_stage_b_latents(self.vqgan.codebook.data, (z, hw, hw), rng, cfg.rescale_token_init)
                for _ in prompts
            ]
        )
        emb = self.text_b.encode(list(prompts))
        null = self.text_b.null_embedding(len(prompts))
        with ad.no_grad():
            for i in range(cfg.tau_b, 0, -1):
                t = float(grid.ts[i])

                def eps_at(e):
                    a, bb = self.refiner(x, cond_sc, e, t)
                    return ab_to_epsilon(x, a.data, bb.data)

                eps = _guided_eps(lambda: eps_at(emb), lambda: eps_at(null), cfg.guidance_b, counts, "stage_b")
                noise = rng.standard_normal(x.shape) if i > 1 else None
                x = np.asarray(ddpm_step(x, eps, i, grid, noise), dtype=np.float32)
        return (x / self.latent_scale).astype(np.float32)

    def _conditioning_batch(self, c_sc: np.ndarray | None, n: int):
        if not self.refiner.cfg.uses_semantic:
            if c_sc is not None:
                raise ValueError("this refiner is text-only and takes no semantic latent")
            return None
        if c_sc is None:
            raise ValueError("this refiner needs a semantic latent")
        c_sc = np.asarray(c_sc, dtype=np.float32)
        expect = (n, SEMANTIC_CHANNELS, self.semantic_hw, self.semantic_hw)
        if c_sc.shape != expect:
            raise ValueError(f"semantic latent batch shape {c_sc.shape} does not match {expect}")
        return c_sc

    # -- end to end ------------------------------------------------------

    def generate(self, prompt: str, cfg: SamplerConfig | None = None) -> GenerationResult:
        """Prompt to pixels, with instrumentation.

        The record carries the prompt, seed, sampler settings, the exact
        number of denoiser forward passes per phase, and wall times.
        """
        cfg = cfg or SamplerConfig()
        counts = new_eval_counts()
        times: dict[str, float] = {}
        t_start = time.perf_counter()

        c_sc = None
        if not self.is_baseline:
            t0 = time.perf_counter()
            c_sc = self.sample_stage_c(prompt, cfg, counts)
            times["stage_c"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        lat = self.sample_stage_b(c_sc, prompt, cfg, counts)
        times["stage_b"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        image = self.vqgan.decode(lat[None].astype(np.float32))[0]
        times["decode"] = time.perf_counter() - t0
        times["total"] = time.perf_counter() - t_start

        record = {
            "prompt": prompt,
            "seed": cfg.seed,
            "mode": "baseline" if self.is_baseline else "cascade",
            "config": dataclasses.asdict(cfg),
            "model_evals": {**counts, "total": counts["stage_c"] + counts["stage_b"]},
            "wall_time_s": {k: round(v, 6) for k, v in times.items()},
            "shapes": {
                "semantic": None if c_sc is None else list(c_sc.shape),
                "latent": list(lat.shape),
                "image": list(image.shape),
            },
        }
        return GenerationResult(image=image.astype(np.float32), record=record)

    def generate_batch(self, prompts: list[str], cfg: SamplerConfig | None = None) -> np.ndarray:
        """Prompts to a stack of (n, 3, S, S) images under one noise stream.

        One denoising walk serves the whole batch, which is far cheaper
        than n single generations but draws different noise per row; use
        :meth:`generate` when a specific per-prompt seed matters.
        """
        cfg = cfg or SamplerConfig()
        prompts = list(prompts)
        c_sc = None if self.is_baseline else self.sample_stage_c_batch(prompts, cfg)
        lat = self.sample_stage_b_batch(c_sc, prompts, cfg)
        return self.decode_batch(lat)

    def decode_batch(self, latents: np.ndarray, chunk: int = 32) -> np.ndarray:
        """Pixel-decode (n, z, h, w) quantizer-space latents in bounded memory."""
        latents = np.asarray(latents, dtype=np.float32)
        outs = [self.vqgan.decode(latents[i : i + chunk]) for i in range(0, len(latents), chunk)]
        return np.concatenate(outs, axis=0).astype(np.float32)

    # -- auxiliary views -------------------------------------------------

    def compress(self, image: np.ndarray) -> np.ndarray:
        """Pixels to a (16, h, w) compressor-space semantic latent."""
        if self.compressor is None:
            raise PreconditionError("this bundle carries no compressor")
        batched = image.ndim == 4
        px = self.compressor.prepare_pixels(image if batched else image[None])
        with ad.no_grad():
            z = self.compressor(px).data.astype(np.float32)
        return z if batched else z[0]

    def probe_decode(self, c_sc: np.ndarray) -> np.ndarray:
        """Image a compressor-space semantic latent through the probe."""
        if self.probe is None:
            raise PreconditionError("this bundle carries no probe decoder")
        arr = np.asarray(c_sc, dtype=np.float32)
        batched = arr.ndim == 4
        out = self.probe(arr if batched else arr[None])
        return out if batched else out[0]

    def compression(self) -> dict:
        """Spatial compression table for this bundle's geometry."""
        if self.compressor is None:
            raise PreconditionError("compression accounting needs the semantic path")
        return compression_report(self.image_size, self.latent_hw, self.semantic_hw)


def _load_stage(workdir: str | os.PathLike, stage: str) -> Checkpoint:
    path = os.path.join(os.fspath(workdir), STAGE_FILES[stage])
    if not os.path.exists(path):
        raise PreconditionError(f"missing trained stage-{stage} checkpoint at {path}")
    return load_checkpoint(path)


def _image_size_of(a_ck: Checkpoint) -> int:
    return int(a_ck.manifest["train_config"]["data"]["image_size"])


def compression_report(image_hw: int, stage_a_hw: int, semantic_hw: int) -> dict:
    """Per-stage and total spatial compression, floored plus exact.

    Each entry reports ``from -> to`` side lengths, the floored integer
    ratio, and the exact ratio as a reduced fraction ``[num, den]``.
    """
    for v in (image_hw, stage_a_hw, semantic_hw):
        if v <= 0:
            raise ValueError("spatial dims must be positive")

    def entry(src: int, dst: int) -> dict:
        r = Fraction(src, dst)
        floor = r.numerator // r.denominator
        return {
            "from": src,
            "to": dst,
            "floor": floor,
            "exact": [r.numerator, r.denominator],
            "label": f"{floor}:1",
        }

    return {
        "stage_a": entry(image_hw, stage_a_hw),
        "semantic": entry(stage_a_hw, semantic_hw),
        "total": entry(image_hw, semantic_hw),
    }
