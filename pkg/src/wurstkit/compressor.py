"""Strong spatial compressor producing the 16-channel semantic latent.

Images are bicubically resized to a fixed working resolution, normalized
with dataset statistics, pushed through a stride-32 convolutional
backbone, then projected by a 1x1 convolution with per-channel affine
normalization into the 16-channel conditioning space. The whole stack is
trainable; its gradients arrive through the refiner loss that consumes
the latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

SEMANTIC_CHANNELS = 16
BACKBONE_STRIDE = 32


@dataclass(frozen=True)
class CompressorConfig:
    input_size: int = 128
    widths: tuple[int, ...] = (16, 32, 48, 64, 96)
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("normalization statistics must have 3 channels")
        if any(s <= 0 for s in self.std):
            raise ValueError("normalization std must be positive")
        if len(self.widths) != 5:
            raise ValueError("backbone needs 5 stride-2 stages (total stride 32)")
        if self.input_size % BACKBONE_STRIDE:
            raise ValueError(f"input size must divide by the backbone stride {BACKBONE_STRIDE}")

    @property
    def latent_hw(self) -> int:
        return self.input_size // BACKBONE_STRIDE

    @property
    def backbone_channels(self) -> int:
        return self.widths[-1]


def resize_bicubic(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Catmull-Rom resample of (..., C, H, W) pixels, clipped to [0,1]."""
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be at least 1x1")
    h, w = image.shape[-2:]
    rh = nn._cached_matrix(h, out_h, "bicubic", np.float64)
    rw = nn._cached_matrix(w, out_w, "bicubic", np.float64)
    # separable resample as two stacked BLAS matmuls; a fused einsum over
    # both axes falls back to a naive contraction and is orders slower
    out = rh @ image.astype(np.float64) @ rw.T
    return np.clip(out, 0.0, 1.0).astype(image.dtype if image.dtype.kind == "f" else np.float32)


class SemanticCompressor(nn.Module):
    def __init__(self, cfg: CompressorConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        chans = (3,) + cfg.widths
        self.stages = [
            nn.Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, pad=1, dtype=dtype)
            for i in range(5)
        ]
        # no bias: the following norm's mean subtraction would cancel it
        self.proj = nn.Conv2d(cfg.backbone_channels, SEMANTIC_CHANNELS, 1, rng, bias=False, dtype=dtype)
        self.norm = nn.BatchNorm2d(SEMANTIC_CHANNELS, dtype=dtype)
        self._mu = np.asarray(cfg.mean, dtype=dtype).reshape(1, 3, 1, 1)
        self._sigma = np.asarray(cfg.std, dtype=dtype).reshape(1, 3, 1, 1)

    def __call__(self, image) -> Tensor:
        """(B, 3, S, S) resized pixels -> (B, 16, S/32, S/32) latent."""
        x = ad.as_tensor(image)
        b, c, h, w = x.shape
        if c != 3:
            raise ValueError("compressor expects 3-channel RGB input")
        if h != self.cfg.input_size or w != self.cfg.input_size:
            raise ValueError(f"input must be pre-resized to {self.cfg.input_size}^2, got {h}x{w}")
        z = (x - self._mu) * (1.0 / self._sigma)
        for conv in self.stages:
            z = ad.gelu(conv(z))
        return self.norm(self.proj(z))

    def prepare_pixels(self, image: np.ndarray) -> np.ndarray:
        """Convenience: bicubic resize of raw pixels to the working size."""
        s = self.cfg.input_size
        return resize_bicubic(image, s, s)


def flatten_semantic(latent) -> "np.ndarray | Tensor":
    """(16, h, w) -> (h*w, 16) row-major; batched (B, 16, h, w) -> (B, h*w, 16)."""
    if latent.ndim == 3:
        c, h, w = latent.shape
        return latent.reshape(c, h * w).transpose(1, 0)
    b, c, h, w = latent.shape
    return latent.reshape(b, c, h * w).transpose(0, 2, 1)


def unflatten_semantic(seq, h: int, w: int) -> "np.ndarray | Tensor":
    """Exact inverse of :func:`flatten_semantic` for the given grid."""
    if seq.ndim == 2:
        n, c = seq.shape
        if n != h * w:
            raise ValueError("sequence length does not match the grid")
        return seq.transpose(1, 0).reshape(c, h, w)
    b, n, c = seq.shape
    if n != h * w:
        raise ValueError("sequence length does not match the grid")
    return seq.transpose(0, 2, 1).reshape(b, c, h, w)
