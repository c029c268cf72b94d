"""Text-conditional diffusion prior over semantic latents (Stage C), and
the probe decoder that images those latents directly.

The prior is a constant-resolution trunk: a 1x1 projection into the
working width, then a sequence of conv blocks, each followed by
cross-attention over the caption tokens plus a single timestep token.
Two zero-initialized 1x1 heads emit the A/B prediction. The probe
decoder is a small upsampling stack used to inspect what the prior's
latents already contain before any refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .compressor import SEMANTIC_CHANNELS
from .diffusion import CosineSchedule, ab_to_epsilon, check_timestep, forward_noise, weighted_loss
from .textcond import TextEncoder, draw_null_mask


@dataclass(frozen=True)
class StageCConfig:
    blocks: int = 4
    width: int = 128
    heads: int = 4
    d_text: int = 64
    text_dropout: float = 0.05

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.width < self.heads:
            raise ValueError("width must be at least the head count")
        if not 0.0 <= self.text_dropout <= 1.0:
            raise ValueError("text dropout must lie in [0, 1]")


class StageC(nn.Module):
    def __init__(self, cfg: StageCConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.in_proj = nn.Conv2d(SEMANTIC_CHANNELS, cfg.width, 1, rng, dtype=dtype)
        self.t_embed = nn.TimestepEmbed(cfg.d_text, rng, dtype=dtype)
        self.trunk = [nn.ConvNeXtBlock(cfg.width, rng, dtype=dtype) for _ in range(cfg.blocks)]
        self.attns = [nn.CrossAttention(cfg.width, cfg.d_text, cfg.heads, rng, dtype=dtype) for _ in range(cfg.blocks)]
        self.head_a = nn.Conv2d(cfg.width, SEMANTIC_CHANNELS, 1, rng, zero_init=True, dtype=dtype)
        self.head_b = nn.Conv2d(cfg.width, SEMANTIC_CHANNELS, 1, rng, zero_init=True, dtype=dtype)

    def __call__(self, x_t, c_text: Tensor, t) -> tuple[Tensor, Tensor]:
        check_timestep(t)
        x_t = ad.as_tensor(x_t)
        b, c, hh, ww = x_t.shape
        if c != SEMANTIC_CHANNELS:
            raise ValueError(f"expected {SEMANTIC_CHANNELS}-channel semantic latent, got {c}")
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (b,))
        t_token = self.t_embed(t_arr).reshape(b, 1, self.cfg.d_text)
        memory = ad.concat([c_text, t_token], axis=1) if c_text.shape[0] == b else ad.concat([_tile(c_text, b), t_token], axis=1)
        h = self.in_proj(x_t)
        for blk, attn in zip(self.trunk, self.attns):
            h = blk(h)
            tokens = h.reshape(b, self.cfg.width, hh * ww).transpose(0, 2, 1)
            tokens = tokens + attn(tokens, memory)
            h = tokens.transpose(0, 2, 1).reshape(b, self.cfg.width, hh, ww)
        return self.head_a(h), self.head_b(h)


def _tile(x: Tensor, b: int) -> Tensor:
    return x if x.shape[0] == b else ad.concat([x] * b, axis=0)


def denoise_c(model: StageC, x_sc_t, c_text, t) -> tuple[Tensor, Tensor]:
    """A/B prediction for a noised semantic latent under text conditioning."""
    return model(x_sc_t, c_text, t)


def train_step_c(
    model: StageC,
    compressor,
    text_encoder: TextEncoder,
    comp_pixels: np.ndarray,
    captions: list[str],
    rng: np.random.Generator,
    schedule: CosineSchedule,
    force_text_dropout: bool = False,
) -> dict:
    """One training forward pass of the prior.

    The compressor runs gradient-free here (it is trained with the
    refiner, frozen for the prior); caption embeddings and the null label
    do receive gradients. Returns the loss graph plus diagnostics.
    """
    if compressor is None:
        raise ValueError("the prior trains against a compressor's latents")
    cfg = model.cfg
    b = comp_pixels.shape[0]
    with ad.no_grad():
        c_sc = compressor(comp_pixels).data

    c_text = text_encoder.encode(captions)
    if force_text_dropout:
        drop = np.ones(b, dtype=bool)
    else:
        drop = draw_null_mask(rng, b, cfg.text_dropout)
    if drop.any():
        c_text = ad.where_mask(drop.reshape(-1, 1, 1), text_encoder.null_embedding(1), c_text)

    t = rng.uniform(0.0, 1.0, size=b)
    abar = schedule.alpha_bar(t)
    eps = rng.standard_normal(c_sc.shape).astype(c_sc.dtype)
    x_t = forward_noise(c_sc, abar, eps)
    a, bb = model(x_t, c_text, t)
    eps_bar = ab_to_epsilon(ad.as_tensor(x_t), a, bb)
    loss = weighted_loss(ad.as_tensor(eps), eps_bar, abar)
    return {"loss": loss, "t": t, "dropped": drop}


@dataclass(frozen=True)
class ProbeDecoderConfig:
    stages: int = 4
    width_start: int = 64

    def __post_init__(self):
        if self.stages < 1 or self.width_start < 2:
            raise ValueError("probe decoder needs >=1 stage and width >=2")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(max(self.width_start >> i, 2) for i in range(self.stages + 1))


def probe_param_formula(cfg: ProbeDecoderConfig, in_ch: int = SEMANTIC_CHANNELS, out_ch: int = 3) -> int:
    """Closed-form parameter count of the probe decoder.

    1x1 in-projection, one 3x3 conv per upsampling stage with halving
    widths, and a final 1x1 to RGB; each conv carries a bias.
    """
    ws = cfg.widths
    total = in_ch * ws[0] + ws[0]
    for i in range(cfg.stages):
        total += ws[i] * 9 * ws[i + 1] + ws[i + 1]
    total += ws[-1] * out_ch + out_ch
    return total


class ProbeDecoder(nn.Module):
    """Upsampling stack: 1x1 in, (nearest x2 + 3x3 conv + GELU) per stage,
    1x1 out to RGB. Spatial growth is 2^stages."""

    def __init__(self, cfg: ProbeDecoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        ws = cfg.widths
        self.inp = nn.Conv2d(SEMANTIC_CHANNELS, ws[0], 1, rng, dtype=dtype)
        self.up = nn.Upsample2x()
        self.convs = [nn.Conv2d(ws[i], ws[i + 1], 3, rng, pad=1, dtype=dtype) for i in range(cfg.stages)]
        self.out = nn.Conv2d(ws[-1], 3, 1, rng, dtype=dtype)

    def forward_train(self, latent) -> Tensor:
        h = self.inp(ad.as_tensor(latent))
        for conv in self.convs:
            h = ad.gelu(conv(self.up(h)))
        return self.out(h)

    def __call__(self, latent) -> np.ndarray:
        """Semantic latent -> RGB image clipped to [0,1]."""
        with ad.no_grad():
            raw = self.forward_train(latent)
        return np.clip(raw.data, 0.0, 1.0)
