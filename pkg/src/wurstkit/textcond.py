"""Deterministic caption embedding with a learned null label.

A hashing tokenizer (lowercase, whitespace split, FNV-1a onto a fixed
table) feeds a trainable embedding plus learned positions. No vocabulary
files: any string maps to ids deterministically, collisions are accepted.
The null label is a single learned sequence substituted for dropped
captions so guidance has a trained unconditional branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619
_FNV_MASK = 0xFFFFFFFF


def fnv1a(token: str) -> int:
    """32-bit FNV-1a over the token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _FNV_MASK
    return h


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 4096
    l_max: int = 8
    d_text: int = 64

    def __post_init__(self):
        if self.vocab_size < 2 or self.l_max < 1 or self.d_text < 1:
            raise ValueError("text config dimensions must be positive")


class TextEncoder(nn.Module):
    """Caption -> (L_max, d_text) sequence embedding; trainable end to end."""

    def __init__(self, cfg: TextConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        # one extra row serves as the padding token
        self.emb = nn.Embedding(cfg.vocab_size + 1, cfg.d_text, rng, dtype=dtype)
        self.pos = nn.Parameter((rng.standard_normal((cfg.l_max, cfg.d_text)) * 0.02).astype(dtype))
        self.null = nn.Parameter((rng.standard_normal((cfg.l_max, cfg.d_text)) * 0.02).astype(dtype))

    @property
    def pad_id(self) -> int:
        return self.cfg.vocab_size

    def tokenize(self, caption: str) -> np.ndarray:
        ids = [fnv1a(tok) % self.cfg.vocab_size for tok in caption.lower().split()]
        ids = ids[: self.cfg.l_max]
        ids += [self.pad_id] * (self.cfg.l_max - len(ids))
        return np.asarray(ids, dtype=np.int64)

    def encode(self, captions: list[str] | str) -> Tensor:
        """Embed a caption or list of captions to (B, L_max, d_text)."""
        if isinstance(captions, str):
            captions = [captions]
        ids = np.stack([self.tokenize(c) for c in captions])
        return self.emb(ids) + self.pos

    def null_embedding(self, batch: int = 1) -> Tensor:
        """The learned unconditional sequence, tiled to (batch, L_max, d_text)."""
        one = self.null.reshape(1, self.cfg.l_max, self.cfg.d_text)
        if batch == 1:
            return one
        return ad.concat([one] * batch, axis=0)


def draw_null_mask(rng: np.random.Generator, batch: int, rate: float) -> np.ndarray:
    """Per-sample caption-drop decisions, True meaning drop."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("drop rate must lie in [0, 1]")
    return rng.random(batch) < rate


def apply_null_mask(emb: Tensor, null: Tensor, mask: np.ndarray) -> Tensor:
    """Replace masked rows of (B, L, D) embeddings with the null sequence."""
    return ad.where_mask(mask.reshape(-1, 1, 1), null, emb)


def maybe_null(emb: Tensor, null: Tensor, rng: np.random.Generator, rate: float = 0.05) -> Tensor:
    """Whole-input caption drop: returns the null sequence with probability
    ``rate``, otherwise the input unchanged."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("drop rate must lie in [0, 1]")
    return null if rng.random() < rate else emb
