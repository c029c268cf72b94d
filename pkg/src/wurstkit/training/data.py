"""Procedural training corpus: colored geometric shapes on white.

Each record is one antialiased shape (supersampled coverage mask, box
downsample) with a compositional caption like ``large red circle on
white``. Rendering is a pure function of (spec, corpus seed, record
index), so corpora are reproducible byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
# Shape radius as a fraction of image size.
SIZE_FRACTIONS: dict[str, float] = {"large": 0.30, "small": 0.16}
KNOWN_SHAPES = ("circle", "square", "triangle")
_SUPERSAMPLE = 4
_MARGIN = 2.0


@dataclass(frozen=True)
class SynthSpec:
    """Vocabulary and geometry of a synthetic corpus."""

    count: int = 1000
    image_size: int = 64
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow")
    shapes: tuple[str, ...] = ("circle", "square", "triangle")
    sizes: tuple[str, ...] = ("large", "small")

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("corpus count must be at least 1")
        if self.image_size < 16:
            raise ValueError("image size must be at least 16")
        for name, vocab in (("colors", self.colors), ("shapes", self.shapes), ("sizes", self.sizes)):
            if not vocab:
                raise ValueError(f"empty vocabulary: {name}")
        for c in self.colors:
            if c not in PALETTE:
                raise ValueError(f"unknown color {c!r}; known: {sorted(PALETTE)}")
        for s in self.shapes:
            if s not in KNOWN_SHAPES:
                raise ValueError(f"unknown shape {s!r}; known: {KNOWN_SHAPES}")
        for s in self.sizes:
            if s not in SIZE_FRACTIONS:
                raise ValueError(f"unknown size {s!r}; known: {sorted(SIZE_FRACTIONS)}")

    @property
    def n_classes(self) -> int:
        """Color-by-shape label count (size is not part of the class)."""
        return len(self.colors) * len(self.shapes)

    def class_id(self, color: str, shape: str) -> int:
        return self.colors.index(color) * len(self.shapes) + self.shapes.index(shape)


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Coverage in [0,1] per pixel via a supersampled inclusion test."""
    ss = _SUPERSAMPLE
    coords = (np.arange(size * ss) + 0.5) / ss
    xx = coords[None, :]
    yy = coords[:, None]
    if shape == "circle":
        hit = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif shape == "square":
        hit = np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= r
    elif shape == "triangle":
        verts = np.array(
            [
                [cx, cy - r],
                [cx + r * np.sqrt(3.0) / 2.0, cy + r / 2.0],
                [cx - r * np.sqrt(3.0) / 2.0, cy + r / 2.0],
            ]
        )
        hit = np.ones((size * ss, size * ss), dtype=bool)
        for i in range(3):
            x1, y1 = verts[i]
            x2, y2 = verts[(i + 1) % 3]
            # Interior lies on one side of each edge; vertex order fixes the sign.
            cross = (xx - x1) * (y2 - y1) - (yy - y1) * (x2 - x1)
            hit &= cross <= 0.0
    else:
        raise ValueError(f"unknown shape {shape!r}")
    cov = hit.astype(np.float32).reshape(size, ss, size, ss).mean(axis=(1, 3))
    return cov


def render_record(spec: SynthSpec, seed: int, index: int) -> tuple[np.ndarray, str, dict]:
    """Render record ``index``: (image (3,S,S) float32 in [0,1], caption, meta)."""
    if not 0 <= index:
        raise ValueError("index must be nonnegative")
    rng = np.random.default_rng([int(seed), int(index)])
    color = spec.colors[int(rng.integers(len(spec.colors)))]
    shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
    size_name = spec.sizes[int(rng.integers(len(spec.sizes)))]
    s = spec.image_size
    r = SIZE_FRACTIONS[size_name] * s
    lo, hi = r + _MARGIN, s - r - _MARGIN
    cx = float(rng.uniform(lo, hi))
    cy = float(rng.uniform(lo, hi))

    cov = _shape_mask(shape, s, cx, cy, r)
    rgb = np.array(PALETTE[color], dtype=np.float32)
    image = 1.0 - cov[None, :, :] * (1.0 - rgb[:, None, None])
    caption = f"{size_name} {color} {shape} on white"
    meta = {
        "color": color,
        "shape": shape,
        "size": size_name,
        "class_id": spec.class_id(color, shape),
        "cx": cx,
        "cy": cy,
    }
    return image.astype(np.float32), caption, meta


@dataclass
class Corpus:
    """Fully materialized in-memory corpus."""

    spec: SynthSpec
    seed: int
    images: np.ndarray  # (N, 3, S, S) float32
    captions: list[str]
    class_ids: np.ndarray  # (N,) int64
    meta: list[dict] = field(repr=False, default_factory=list)

    def __len__(self) -> int:
        return len(self.captions)


def build_corpus(spec: SynthSpec, seed: int) -> Corpus:
    images = np.empty((spec.count, 3, spec.image_size, spec.image_size), dtype=np.float32)
    captions: list[str] = []
    class_ids = np.empty(spec.count, dtype=np.int64)
    meta: list[dict] = []
    for i in range(spec.count):
        img, cap, m = render_record(spec, seed, i)
        images[i] = img
        captions.append(cap)
        class_ids[i] = m["class_id"]
        meta.append(m)
    return Corpus(spec=spec, seed=seed, images=images, captions=captions, class_ids=class_ids, meta=meta)


def save_png(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a (3,H,W) float image in [0,1] as an 8-bit RGB PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(os.fspath(path), format="PNG")


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Read an RGB image file into (3,H,W) float32 in [0,1]."""
    from PIL import Image

    with Image.open(os.fspath(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def synth_dataset(spec: SynthSpec, seed: int, out_dir: str | os.PathLike) -> str:
    """Materialize a corpus on disk: PNGs plus a JSON-lines manifest.

    Returns the manifest path. Records are ordered by id; reruns with the
    same spec and seed reproduce identical bytes.
    """
    out_dir = os.fspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = []
    for i in range(spec.count):
        img, cap, m = render_record(spec, seed, i)
        rel = os.path.join("images", f"{i:06d}.png")
        save_png(os.path.join(out_dir, rel), img)
        lines.append(
            json.dumps(
                {
                    "id": i,
                    "image": rel,
                    "caption": cap,
                    "color": m["color"],
                    "shape": m["shape"],
                    "size": m["size"],
                    "class_id": m["class_id"],
                },
                sort_keys=True,
            )
        )
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    from .checkpoint import atomic_write_bytes

    atomic_write_bytes(manifest_path, ("\n".join(lines) + "\n").encode("utf-8"))
    return manifest_path


def read_manifest(path: str | os.PathLike) -> list[dict]:
    records = []
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    records.sort(key=lambda r: r["id"])
    return records
