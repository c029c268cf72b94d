"""Conditional latent diffusion refiner operating in the Stage A latent
space (Stage B).

A two-resolution U-Net denoises 4-channel latents under three signals:
the 16-channel semantic latent (injected twice: bicubically resized and
concatenated into the conv blocks of attention stages, and flattened
into the cross-attention memory), an optional caption embedding in the
same memory, and a timestep embedding applied as per-stage feature
modulation. Output heads are zero-initialized so an untrained model's
noise estimate reduces to its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .compressor import SEMANTIC_CHANNELS, flatten_semantic
from .diffusion import CosineSchedule, check_timestep, forward_noise
from .textcond import TextEncoder, draw_null_mask

CONDITIONING_MODES = ("semantic_text", "semantic", "text")


@dataclass(frozen=True)
class StageBConfig:
    latent_channels: int = 4
    widths: tuple[int, ...] = (64, 128)
    blocks: tuple[int, ...] = (2, 4)
    heads: tuple[int, ...] = (0, 4)
    csc_hw: int = 4
    d_text: int = 64
    t_dim: int = 64
    p_aug: float = 0.5
    t_aug_max: float = 0.3
    csc_dropout: float = 0.1
    text_dropout: float = 0.05
    conditioning: str = "semantic_text"

    def __post_init__(self):
        if not (len(self.widths) == len(self.blocks) == len(self.heads)):
            raise ValueError("widths, blocks and heads must have the same length")
        for rate in (self.p_aug, self.csc_dropout, self.text_dropout):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if not 0.0 <= self.t_aug_max <= 1.0:
            raise ValueError("augmentation noise level must lie in [0, 1]")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}")

    @property
    def uses_semantic(self) -> bool:
        return self.conditioning in ("semantic_text", "semantic")

    @property
    def uses_text(self) -> bool:
        return self.conditioning in ("semantic_text", "text")


class _AttnStageBlock(nn.Module):
    """Conv block with side-channel concat followed by token cross-attention."""

    def __init__(self, dim: int, extra_ch: int, kv_dim: int, heads: int, rng, dtype):
        self.conv = nn.ConvNeXtBlock(dim, rng, extra_ch=extra_ch, dtype=dtype)
        self.attn = nn.CrossAttention(dim, kv_dim, heads, rng, dtype=dtype)

    def __call__(self, x: Tensor, extra: Tensor | None, memory: Tensor) -> Tensor:
        h = self.conv(x, extra)
        b, c, hh, ww = h.shape
        tokens = h.reshape(b, c, hh * ww).transpose(0, 2, 1)
        tokens = tokens + self.attn(tokens, memory)
        return tokens.transpose(0, 2, 1).reshape(b, c, hh, ww)


class StageB(nn.Module):
    def __init__(self, cfg: StageBConfig, rng: np.random.Generator, dtype=np.float32):
        if len(cfg.widths) != 2:
            raise ValueError("this refiner is built for exactly two stages")
        self.cfg = cfg
        w1, w2 = cfg.widths
        zc = cfg.latent_channels
        kv = cfg.d_text
        extra = SEMANTIC_CHANNELS if cfg.uses_semantic else 0

        self.t_embed = nn.TimestepEmbed(cfg.t_dim, rng, dtype=dtype)
        if cfg.uses_semantic:
            # token projection of the flattened semantic latent into the
            # cross-attention memory space
            self.csc_to_kv = nn.Linear(SEMANTIC_CHANNELS, kv, rng, dtype=dtype)
            self.null_csc = nn.Parameter((rng.standard_normal((SEMANTIC_CHANNELS, cfg.csc_hw, cfg.csc_hw)) * 0.02).astype(dtype))

        self.down1 = nn.Conv2d(zc, w1, 2, rng, stride=2, dtype=dtype)
        self.film1 = nn.FiLM(w1, cfg.t_dim, rng, dtype=dtype)
        self.enc1 = [nn.ConvNeXtBlock(w1, rng, dtype=dtype) for _ in range(cfg.blocks[0])]

        self.down2 = nn.Conv2d(w1, w2, 2, rng, stride=2, dtype=dtype)
        self.film2 = nn.FiLM(w2, cfg.t_dim, rng, dtype=dtype)
        self.enc2 = [
            _AttnStageBlock(w2, extra, kv, cfg.heads[1], rng, dtype)
            for _ in range(cfg.blocks[1])
        ]

        self.up1 = nn.ConvTranspose2d(w2, w1, 2, rng, stride=2, dtype=dtype)
        self.fuse1 = nn.Conv2d(w1 + w1, w1, 1, rng, dtype=dtype)
        self.film3 = nn.FiLM(w1, cfg.t_dim, rng, dtype=dtype)
        self.dec1 = [nn.ConvNeXtBlock(w1, rng, dtype=dtype) for _ in range(cfg.blocks[0])]

        self.up2 = nn.ConvTranspose2d(w1, w1, 2, rng, stride=2, dtype=dtype)
        self.fuse2 = nn.Conv2d(w1 + zc, w1, 1, rng, dtype=dtype)
        self.film4 = nn.FiLM(w1, cfg.t_dim, rng, dtype=dtype)
        self.dec2 = nn.ConvNeXtBlock(w1, rng, dtype=dtype)

        self.head_a = nn.Conv2d(w1, zc, 1, rng, zero_init=True, dtype=dtype)
        self.head_b = nn.Conv2d(w1, zc, 1, rng, zero_init=True, dtype=dtype)

    def _memory(self, c_sc: Tensor | None, c_text: Tensor | None) -> Tensor:
        """Cross-attention memory: [text tokens; flattened semantic tokens]."""
        parts = []
        if self.cfg.uses_text:
            if c_text is None:
                raise ValueError("text conditioning enabled but no embedding given")
            parts.append(c_text)
        if self.cfg.uses_semantic:
            if c_sc is None:
                raise ValueError("semantic conditioning enabled but no latent given")
            parts.append(self.csc_to_kv(flatten_semantic(c_sc)))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    def __call__(self, x_t, c_sc, c_text, t) -> tuple[Tensor, Tensor]:
        check_timestep(t)
        x_t = ad.as_tensor(x_t)
        b, zc, hh, ww = x_t.shape
        if zc != self.cfg.latent_channels:
            raise ValueError(f"expected {self.cfg.latent_channels} latent channels, got {zc}")
        if self.cfg.uses_semantic:
            if c_sc is None:
                raise ValueError("semantic conditioning enabled but no latent given")
            c_sc = ad.as_tensor(c_sc)
            if c_sc.ndim != 4 or c_sc.shape[1] != SEMANTIC_CHANNELS:
                raise ValueError("semantic latent must be (B, 16, h, w)")
        memory = self._memory(c_sc, c_text)
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (b,))
        t_emb = self.t_embed(t_arr)

        h1 = self.film1(self.down1(x_t), t_emb)
        for blk in self.enc1:
            h1 = blk(h1)

        h2 = self.film2(self.down2(h1), t_emb)
        extra = None
        if self.cfg.uses_semantic:
            extra = nn.resize2d(c_sc, h2.shape[2], h2.shape[3], "bicubic")
        for blk in self.enc2:
            h2 = blk(h2, extra, memory)

        d1 = self.fuse1(ad.concat([self.up1(h2), h1], axis=1))
        d1 = self.film3(d1, t_emb)
        for blk in self.dec1:
            d1 = blk(d1)

        d2 = self.fuse2(ad.concat([self.up2(d1), x_t], axis=1))
        d2 = self.dec2(self.film4(d2, t_emb))
        return self.head_a(d2), self.head_b(d2)

    def null_semantic(self, batch: int) -> Tensor:
        s = self.cfg.csc_hw
        one = self.null_csc.reshape(1, SEMANTIC_CHANNELS, s, s)
        return one if batch == 1 else ad.concat([one] * batch, axis=0)


def denoise_b(model: StageB, x_t, c_sc, c_text, t) -> tuple[Tensor, Tensor]:
    """A/B prediction for a noised Stage A latent under full conditioning."""
    return model(x_t, c_sc, c_text, t)


def augment_conditioning(c_sc, rng: np.random.Generator, cfg: StageBConfig, schedule: CosineSchedule):
    """Noise the semantic latent for a random subset of the batch.

    Each sample independently triggers with probability p_aug; triggered
    rows are forward-noised to a level drawn uniformly from
    [0, t_aug_max]. Works on Tensors (gradients pass through the linear
    noising) and plain arrays alike.
    """
    b = c_sc.shape[0]
    triggered = rng.random(b) < cfg.p_aug
    if not triggered.any():
        return c_sc
    t_aug = np.where(triggered, rng.uniform(0.0, cfg.t_aug_max, size=b), 0.0)
    eps = rng.standard_normal(c_sc.shape).astype(_dtype_of(c_sc))
    noised = forward_noise(c_sc, schedule.alpha_bar(t_aug), eps)
    mask = triggered.reshape(-1, 1, 1, 1)
    if isinstance(c_sc, Tensor) or isinstance(noised, Tensor):
        return ad.where_mask(mask, noised, c_sc)
    return np.where(mask, noised, c_sc)


def train_step_b(
    model: StageB,
    compressor,
    text_encoder: TextEncoder | None,
    latents: np.ndarray,
    comp_pixels: np.ndarray,
    captions: list[str] | None,
    rng: np.random.Generator,
    schedule: CosineSchedule,
) -> dict:
    """One training forward pass; returns the loss graph and diagnostics.

    ``latents`` are frozen Stage A encoder outputs (unquantized);
    ``comp_pixels`` are the matching compressor-resolution images. The
    loss graph reaches both the refiner and the compressor parameters.
    """
    from .diffusion import ab_to_epsilon, weighted_loss

    cfg = model.cfg
    b = latents.shape[0]
    c_sc = None
    if cfg.uses_semantic:
        if compressor is None:
            raise ValueError("semantic conditioning requires a compressor")
        c_sc = compressor(comp_pixels)
        c_sc = augment_conditioning(c_sc, rng, cfg, schedule)
        drop = draw_null_mask(rng, b, cfg.csc_dropout)
        if drop.any():
            c_sc = ad.where_mask(drop.reshape(-1, 1, 1, 1), model.null_semantic(1), c_sc)
    c_text = None
    if cfg.uses_text:
        if text_encoder is None or captions is None:
            raise ValueError("text conditioning requires an encoder and captions")
        c_text = text_encoder.encode(captions)
        tdrop = draw_null_mask(rng, b, cfg.text_dropout)
        if tdrop.any():
            c_text = ad.where_mask(tdrop.reshape(-1, 1, 1), text_encoder.null_embedding(1), c_text)

    t = rng.uniform(0.0, 1.0, size=b)
    abar = schedule.alpha_bar(t)
    eps = rng.standard_normal(latents.shape).astype(latents.dtype)
    x_t = forward_noise(latents, abar, eps)
    a, bb = model(x_t, c_sc, c_text, t)
    eps_bar = ab_to_epsilon(ad.as_tensor(x_t), a, bb)
    loss = weighted_loss(ad.as_tensor(eps), eps_bar, abar)
    return {"loss": loss, "t": t, "abar": abar}


def _dtype_of(x):
    return x.dtype if isinstance(x, np.ndarray) else x.data.dtype
