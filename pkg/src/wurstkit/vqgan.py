"""Pixel-space autoencoder with a vector-quantized bottleneck (Stage A).

Encoder and decoder are two-stage convolutional stacks bounded by
pixel-shuffle rearrangements, totalling a 4x spatial reduction into a
4-channel latent. The quantizer snaps each spatial vector to its nearest
codebook entry; training passes decoder gradients straight through the
snap and adds codebook/commitment pull terms. The composite training
loss mixes reconstruction, a delayed adversarial term from a small patch
discriminator, and a fixed random-feature perceptual distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .backend import kernels as K

#: seed for the frozen random perceptual feature net (never trained)
PERCEPTUAL_SEED = 7001


@dataclass(frozen=True)
class VQGANConfig:
    z: int = 4
    codebook_size: int = 256
    widths: tuple[int, int] = (32, 64)
    enc_blocks: tuple[int, int] = (1, 1)
    dec_blocks: tuple[int, int] = (2, 1)
    commitment: float = 0.25
    quant_dropout: float = 0.1
    mse_weight: float = 1.0
    adv_weight: float = 0.01
    adv_start_step: int = 10_000
    perc_weight: float = 0.1

    def __post_init__(self):
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least 2 entries")
        if not 0.0 <= self.quant_dropout <= 1.0:
            raise ValueError("quantization drop rate must lie in [0, 1]")


class Encoder(nn.Module):
    def __init__(self, cfg: VQGANConfig, rng: np.random.Generator, dtype=np.float32):
        w1, w2 = cfg.widths
        self.inp = nn.Conv2d(12, w1, 1, rng, dtype=dtype)
        self.stage1 = [nn.ConvNeXtBlock(w1, rng, dtype=dtype) for _ in range(cfg.enc_blocks[0])]
        self.down = nn.Conv2d(w1, w2, 4, rng, stride=2, pad=1, dtype=dtype)
        self.stage2 = [nn.ConvNeXtBlock(w2, rng, dtype=dtype) for _ in range(cfg.enc_blocks[1])]
        self.out = nn.Conv2d(w2, cfg.z, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.inp(nn.pixel_unshuffle(x, 2))
        for blk in self.stage1:
            h = blk(h)
        h = self.down(h)
        for blk in self.stage2:
            h = blk(h)
        return self.out(h)


class Decoder(nn.Module):
    def __init__(self, cfg: VQGANConfig, rng: np.random.Generator, dtype=np.float32):
        w1, w2 = cfg.widths
        self.inp = nn.Conv2d(cfg.z, w2, 1, rng, dtype=dtype)
        self.stage1 = [nn.ConvNeXtBlock(w2, rng, dtype=dtype) for _ in range(cfg.dec_blocks[0])]
        self.up = nn.ConvTranspose2d(w2, w1, 4, rng, stride=2, pad=1, dtype=dtype)
        self.stage2 = [nn.ConvNeXtBlock(w1, rng, dtype=dtype) for _ in range(cfg.dec_blocks[1])]
        self.out = nn.Conv2d(w1, 12, 1, rng, dtype=dtype)

    def __call__(self, z: Tensor) -> Tensor:
        h = self.inp(z)
        for blk in self.stage1:
            h = blk(h)
        h = self.up(h)
        for blk in self.stage2:
            h = blk(h)
        return nn.pixel_shuffle(self.out(h), 2)


def nearest_entries(vectors: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the closest codebook row per vector; ties go to the lowest index."""
    if vectors.shape[-1] != codebook.shape[-1]:
        raise ValueError("vector dim does not match codebook dim")
    return K.nearest_code(np.ascontiguousarray(vectors), np.ascontiguousarray(codebook))


def quantize(latent: np.ndarray, codebook: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Snap (B, z, h, w) or (z, h, w) latents to the codebook.

    Returns (token grid, quantized latent) with the same leading shape.
    """
    single = latent.ndim == 3
    lat = latent[None] if single else latent
    b, z, h, w = lat.shape
    vecs = np.ascontiguousarray(lat.transpose(0, 2, 3, 1).reshape(-1, z))
    idx = nearest_entries(vecs, codebook)
    quant = codebook[idx].reshape(b, h, w, z).transpose(0, 3, 1, 2)
    tokens = idx.reshape(b, h, w)
    if single:
        return tokens[0], np.ascontiguousarray(quant[0])
    return tokens, np.ascontiguousarray(quant)


def maybe_drop_quantization(rng: np.random.Generator, rate: float) -> bool:
    """Training-time coin flip that bypasses the quantizer when True."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("drop rate must lie in [0, 1]")
    return bool(rng.random() < rate)


class VQGAN(nn.Module):
    def __init__(self, cfg: VQGANConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng, dtype)
        k = cfg.codebook_size
        self.codebook = nn.Parameter(rng.uniform(-1.0 / k, 1.0 / k, size=(k, cfg.z)).astype(dtype))
        self.decoder = Decoder(cfg, rng, dtype)

    def _check_image(self, x) -> None:
        c, h, w = x.shape[-3:]
        if c != 3:
            raise ValueError("expected 3-channel RGB input")
        if h % 4 or w % 4:
            raise ValueError(f"image dims ({h},{w}) must divide by 4")

    def encode(self, image) -> Tensor:
        """(B, 3, H, W) pixels in [0,1] -> (B, 4, H/4, W/4) latent."""
        self._check_image(image)
        return self.encoder(ad.as_tensor(image))

    def decode(self, latent) -> np.ndarray:
        """Latent -> pixels clipped to [0,1]; inference boundary."""
        with ad.no_grad():
            raw = self.decoder(ad.as_tensor(latent))
        return np.clip(raw.data, 0.0, 1.0)

    def decode_train(self, latent: Tensor) -> Tensor:
        """Unclipped decode for loss computation."""
        return self.decoder(latent)

    def quantize_st(self, latent: Tensor) -> tuple[np.ndarray, Tensor, Tensor, Tensor]:
        """Training-path quantization.

        Returns (tokens, straight-through latent, codebook pull term,
        commitment term). The straight-through output carries the
        quantized values but routes gradients to the encoder output.
        """
        b, z, h, w = latent.shape
        flat = latent.transpose(0, 2, 3, 1).reshape(b * h * w, z)
        idx = nearest_entries(flat.data, self.codebook.data)
        chosen = ad.gather_rows(self.codebook, idx)
        codebook_loss = nn.mse(chosen, flat.detach())
        commit_loss = self.cfg.commitment * nn.mse(flat, chosen.detach())
        st = ad.straight_through(chosen.data, flat)
        zq = st.reshape(b, h, w, z).transpose(0, 3, 1, 2)
        return idx.reshape(b, h, w), zq, codebook_loss, commit_loss

    def reconstruct(self, image: np.ndarray, quantized: bool = True) -> np.ndarray:
        with ad.no_grad():
            lat = self.encode(image).data
        if quantized:
            _, lat = quantize(lat, self.codebook.data)
        return self.decode(lat)

    def usage_histogram(self, images: np.ndarray, batch: int = 16) -> np.ndarray:
        """Codebook hit counts over a pixel dataset (collapse diagnostic)."""
        counts = np.zeros(self.cfg.codebook_size, dtype=np.int64)
        for i in range(0, len(images), batch):
            with ad.no_grad():
                lat = self.encode(images[i : i + batch]).data
            tokens, _ = quantize(lat, self.codebook.data)
            np.add.at(counts, tokens.reshape(-1), 1)
        return counts


def revive_dead_entries(codebook: nn.Parameter, usage: np.ndarray, batch_vectors: np.ndarray, rng: np.random.Generator) -> int:
    """Reassign never-hit codebook rows to random encoder outputs.

    Returns how many entries were replaced; the caller owns resetting the
    usage counter.
    """
    dead = np.flatnonzero(usage == 0)
    if dead.size == 0 or len(batch_vectors) == 0:
        return 0
    picks = rng.integers(0, len(batch_vectors), size=dead.size)
    codebook.data[dead] = batch_vectors[picks].astype(codebook.data.dtype)
    return int(dead.size)


class PatchDiscriminator(nn.Module):
    """Small strided conv stack scoring overlapping patches (hinge GAN)."""

    def __init__(self, rng: np.random.Generator, width: int = 24, dtype=np.float32):
        self.c1 = nn.Conv2d(3, width, 4, rng, stride=2, pad=1, dtype=dtype)
        self.c2 = nn.Conv2d(width, width * 2, 4, rng, stride=2, pad=1, dtype=dtype)
        self.c3 = nn.Conv2d(width * 2, 1, 3, rng, pad=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.gelu(self.c1(ad.as_tensor(x)))
        h = ad.gelu(self.c2(h))
        return self.c3(h)


def _relu(x: Tensor) -> Tensor:
    return (x + x.abs()) * 0.5


def hinge_d_loss(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    """Discriminator objective: push real scores above 1, fake below -1."""
    return _relu(1.0 - logits_real).mean() + _relu(1.0 + logits_fake).mean()


def hinge_g_loss(logits_fake: Tensor) -> Tensor:
    """Generator objective: raise the discriminator's score on outputs."""
    return (-logits_fake).mean()


class PerceptualNet(nn.Module):
    """Frozen 4-layer random conv feature extractor.

    Weights come from a fixed seed and never train; distances between its
    feature maps give a cheap structural similarity signal.
    """

    def __init__(self, dtype=np.float32, seed: int = PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self.c1 = nn.Conv2d(3, 8, 3, rng, pad=1, dtype=dtype)
        self.c2 = nn.Conv2d(8, 16, 3, rng, stride=2, pad=1, dtype=dtype)
        self.c3 = nn.Conv2d(16, 16, 3, rng, pad=1, dtype=dtype)
        self.c4 = nn.Conv2d(16, 24, 3, rng, stride=2, pad=1, dtype=dtype)
        for p in self.parameters():
            p.requires_grad = False

    def features(self, x: Tensor) -> list[Tensor]:
        f1 = ad.gelu(self.c1(ad.as_tensor(x)))
        f2 = ad.gelu(self.c2(f1))
        f3 = ad.gelu(self.c3(f2))
        f4 = self.c4(f3)
        return [f1, f2, f3, f4]


def perceptual_loss(net: PerceptualNet, image, recon) -> Tensor:
    fa = net.features(image)
    fb = net.features(recon)
    terms = [nn.mse(a, b) for a, b in zip(fa, fb)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def adv_weight_at(step: int, cfg: VQGANConfig) -> float:
    """Adversarial term stays off for the warmup, then holds at its weight."""
    return 0.0 if step < cfg.adv_start_step else cfg.adv_weight


def stage_a_loss(
    image,
    recon: Tensor,
    step: int,
    cfg: VQGANConfig,
    perceptual_net: PerceptualNet | None = None,
    logits_fake: Tensor | None = None,
) -> dict[str, Tensor | float]:
    """Composite reconstruction objective with per-term breakdown.

    total = mse_weight*MSE + w_adv(step)*hinge_G + perc_weight*perceptual,
    where w_adv is zero before the configured warmup step.
    """
    if image.shape != recon.shape:
        raise ValueError("image and reconstruction shapes differ")
    mse_term = nn.mse(recon, image)
    w_adv = adv_weight_at(step, cfg)
    total = cfg.mse_weight * mse_term
    out: dict[str, Tensor | float] = {"mse": mse_term, "w_adv": w_adv}
    if logits_fake is not None and w_adv > 0.0:
        adv_term = hinge_g_loss(logits_fake)
        total = total + w_adv * adv_term
        out["adv"] = adv_term
    else:
        out["adv"] = 0.0
    if perceptual_net is not None:
        perc_term = perceptual_loss(perceptual_net, image, recon)
        total = total + cfg.perc_weight * perc_term
        out["perc"] = perc_term
    else:
        out["perc"] = 0.0
    out["total"] = total
    return out
