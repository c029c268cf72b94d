"""Feature extractor backing the distance metrics.

A small convolutional classifier trained once on the synthetic corpus
and then frozen; its pooled penultimate activations are the feature
space for Fréchet-distance comparisons, and its softmax output feeds
the label-entropy score. Training applies photometric jitter so the
feature space tolerates mild brightness/contrast changes better than
structural damage, mirroring how large pretrained extractors behave.

Trained weights are cached on disk keyed by a version string plus a
hash of every input that shapes the result; set WURSTKIT_CACHE to move
the cache directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ..training.data import SynthSpec, build_corpus
from ..training.optim import AdamW
from .fid import FeatureStats

# Bump when the architecture or training recipe changes meaning.
EXTRACTOR_VERSION = "fx2"


@dataclass(frozen=True)
class ExtractorConfig:
    """Architecture and training recipe for the frozen classifier."""

    input_size: int = 32
    widths: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 64
    n_classes: int = 12
    steps: int = 600
    batch_size: int = 64
    lr: float = 2e-3
    weight_decay: float = 0.01
    seed: int = 0
    jitter: float = 0.25

    def __post_init__(self):
        if len(self.widths) != 3:
            raise ValueError("expected three conv widths")
        if self.widths[-1] != self.feature_dim:
            raise ValueError("last conv width must equal the feature dim")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")


class FeatureExtractor(nn.Module):
    """Three strided convs, global average pool, linear head."""

    def __init__(self, cfg: ExtractorConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        chans = (3,) + cfg.widths
        self.convs = [
            nn.Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, pad=1, dtype=dtype)
            for i in range(3)
        ]
        self.head = nn.Linear(cfg.feature_dim, cfg.n_classes, rng, dtype=dtype)

    def _prepare(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError("expected (B, 3, H, W) images")
        s = self.cfg.input_size
        if x.shape[2] != s or x.shape[3] != s:
            x = resize_image(x, s, "bilinear")
        return x

    def _trunk(self, x) -> ad.Tensor:
        h = ad.as_tensor(x)
        # Per-image standardization cancels affine intensity maps, so
        # brightness or contrast tweaks move the features far less than
        # structural damage does.
        mu = h.mean(axis=(1, 2, 3), keepdims=True)
        var = ((h - mu) * (h - mu)).mean(axis=(1, 2, 3), keepdims=True)
        h = (h - mu) / ad.sqrt(var + 1e-5)
        for conv in self.convs:
            h = ad.gelu(conv(h))
        return h.mean(axis=(2, 3))

    def features(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, H, W) pixels in [0,1] -> (B, d_f) pooled features."""
        with ad.no_grad():
            return self._trunk(self._prepare(images)).data.astype(np.float32)

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, H, W) -> (B, n_classes) softmax rows."""
        with ad.no_grad():
            logits = self.head(self._trunk(self._prepare(images)))
            return ad.softmax(logits, axis=-1).data.astype(np.float64)

    def train_logits(self, images: np.ndarray) -> ad.Tensor:
        return self.head(self._trunk(images))


def resize_image(images: np.ndarray, size: int, kind: str) -> np.ndarray:
    """Separable resample of plain (..., H, W) arrays to size^2."""
    h, w = images.shape[-2:]
    if (h, w) == (size, size):
        return images.astype(np.float32, copy=True)
    mh = nn.resize_matrix(h, size, kind).astype(np.float32)
    mw = nn.resize_matrix(w, size, kind).astype(np.float32)
    return np.clip(mh @ images.astype(np.float32) @ mw.T, 0.0, 1.0)


def photometric_jitter(images: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    """Per-image random brightness and contrast within ±strength."""
    b = images.shape[0]
    bright = 1.0 + rng.uniform(-strength, strength, size=(b, 1, 1, 1))
    contrast = 1.0 + rng.uniform(-strength, strength, size=(b, 1, 1, 1))
    out = (images * bright - 0.5) * contrast + 0.5
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def train_extractor(cfg: ExtractorConfig, data: SynthSpec, data_seed: int) -> FeatureExtractor:
    """Train the classifier from scratch; deterministic in its inputs."""
    corpus = build_corpus(data, data_seed)
    init_rng = np.random.default_rng([cfg.seed, 21])
    loop_rng = np.random.default_rng([cfg.seed, 22])
    model = FeatureExtractor(cfg, init_rng)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    eye = np.eye(cfg.n_classes, dtype=np.float32)
    for _ in range(cfg.steps):
        idx = loop_rng.integers(0, len(corpus), size=cfg.batch_size)
        images = photometric_jitter(corpus.images[idx], loop_rng, cfg.jitter)
        images = resize_image(images, cfg.input_size, "bilinear")
        logits = model.train_logits(images)
        onehot = eye[corpus.class_ids[idx]]
        loss = -(ad.log(ad.softmax(logits, axis=-1) + 1e-12) * onehot).sum(axis=1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        opt.zero_grad()
    return model


def _cache_dir() -> str:
    root = os.environ.get("WURSTKIT_CACHE")
    if not root:
        root = os.path.join(os.path.expanduser("~"), ".cache", "wurstkit")
    os.makedirs(root, exist_ok=True)
    return root


def _cache_key(cfg: ExtractorConfig, data: SynthSpec, data_seed: int) -> str:
    payload = json.dumps(
        {
            "version": EXTRACTOR_VERSION,
            "config": dataclasses.asdict(cfg),
            "data": dataclasses.asdict(data),
            "data_seed": data_seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def get_extractor(
    cfg: ExtractorConfig | None = None,
    data: SynthSpec | None = None,
    data_seed: int = 777,
    cache: bool = True,
) -> FeatureExtractor:
    """Load the pinned extractor from cache, training it on a miss.

    The default data seed differs from the generative training corpora so
    the metric never scores a model against features fit on its own
    training images.
    """
    cfg = cfg or ExtractorConfig()
    data = data or SynthSpec()
    path = os.path.join(_cache_dir(), f"extractor_{EXTRACTOR_VERSION}_{_cache_key(cfg, data, data_seed)}.ckpt")
    if cache and os.path.exists(path):
        ck = load_checkpoint(path)
        model = FeatureExtractor(ExtractorConfig(**_detuple(ck.manifest["config"])), np.random.default_rng(0))
        model.load_state_dict(ck.tensors)
        return model
    model = train_extractor(cfg, data, data_seed)
    if cache:
        manifest = {
            "kind": "wurstkit-extractor",
            "version": EXTRACTOR_VERSION,
            "config": dataclasses.asdict(cfg),
            "data": dataclasses.asdict(data),
            "data_seed": data_seed,
        }
        save_checkpoint(path, Checkpoint(manifest=manifest, tensors=model.state_dict()))
    return model


def _detuple(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def extract_stats(images: np.ndarray, extractor: FeatureExtractor, batch: int = 64) -> FeatureStats:
    """One-pass feature statistics of an image set."""
    if len(images) == 0:
        raise ValueError("empty image set")
    stats = FeatureStats(dim=extractor.cfg.feature_dim)
    for i in range(0, len(images), batch):
        stats.update(extractor.features(images[i : i + batch]).astype(np.float64))
    return stats
