"""Image manipulations for the metric-robustness audit.

Each manipulation is a fixed, platform-stable transform of a (3, H, W)
float image in [0, 1]:

* ``jpeg``: round trip through a baseline JPEG model: BT.601 full-range
  YCbCr, 2x2-averaged 4:2:0 chroma, 8x8 orthonormal DCT, the standard
  example quantization tables scaled by the common integer quality
  rule, quantize, invert. Only the lossy path is modeled; no bitstream
  is produced, which keeps the result bit-stable everywhere.
* ``resample``: down to the feature extractor's input size with the
  given kernel and back up with the same kernel, so kernel damage is
  measured at unchanged shape.
* ``palette``: 8-bit quantization then median-cut reduction to 256
  colors; images already within 256 distinct 8-bit colors pass through
  unchanged.
* ``brightness`` / ``contrast``: x*(1+p/100) and (x-0.5)*(1+p/100)+0.5,
  clipped.

All manipulations preserve shape and the [0, 1] range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import resize_matrix

EXTRACTOR_INPUT = 32

_KINDS = ("identity", "jpeg", "resample", "palette", "brightness", "contrast")
_KERNELS = ("nearest", "bilinear")


@dataclass(frozen=True)
class ManipulationSpec:
    """One manipulation: a kind plus its parameter.

    ``value`` is the quality for ``jpeg``, the kernel name for
    ``resample``, and the signed percentage for ``brightness`` and
    ``contrast`` (the sign picks the direction, the magnitude stays
    within 100). ``identity`` and ``palette`` take no parameter.
    """

    kind: str
    value: float | str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown manipulation kind {self.kind!r}")
        if self.kind == "jpeg":
            if not isinstance(self.value, int) or not 1 <= self.value <= 100:
                raise ValueError("jpeg quality must be an integer in [1, 100]")
        elif self.kind == "resample":
            if self.value not in _KERNELS:
                raise ValueError(f"resample kernel must be one of {_KERNELS}")
        elif self.kind in ("brightness", "contrast"):
            if not isinstance(self.value, (int, float)) or abs(self.value) > 100:
                raise ValueError("percentage magnitude must lie in [0, 100]")
        elif self.value is not None:
            raise ValueError(f"{self.kind} takes no parameter")

    @property
    def label(self) -> str:
        if self.kind == "jpeg":
            return f"jpeg q={self.value}"
        if self.kind == "resample":
            return f"resample {self.value}"
        if self.kind == "palette":
            return "palette-256"
        if self.kind in ("brightness", "contrast"):
            return f"{self.kind} {self.value:+g}%"
        return "identity"

    @classmethod
    def parse(cls, text: str) -> "ManipulationSpec":
        """Inverse of a compact ``kind[:value]`` form, e.g. ``jpeg:80``."""
        kind, _, raw = text.partition(":")
        if not raw:
            return cls(kind)
        if kind == "jpeg":
            return cls(kind, int(raw))
        if kind == "resample":
            return cls(kind, raw)
        return cls(kind, float(raw))


# ---------------------------------------------------------------------------
# JPEG model

# Standard example luminance/chrominance quantization tables.
_Q_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)
_Q_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


def quality_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantization tables at a quality setting, via the usual integer rule."""
    if not 1 <= quality <= 100:
        raise ValueError("quality must lie in [1, 100]")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    out = []
    for base in (_Q_LUMA, _Q_CHROMA):
        t = (base * scale + 50) // 100
        out.append(np.clip(t, 1, 255).astype(np.float64))
    return out[0], out[1]


def _dct_matrix() -> np.ndarray:
    n = np.arange(8)
    k = n.reshape(-1, 1)
    c = np.sqrt(2.0 / 8.0) * np.cos(np.pi * (2 * n + 1) * k / 16.0)
    c[0] = np.sqrt(1.0 / 8.0)
    return c


_DCT = _dct_matrix()


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return blocks.transpose(0, 2, 1, 3).reshape(h, w)


def _code_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """DCT, quantize, dequantize, inverse DCT of one padded plane."""
    h, w = plane.shape
    coef = _DCT @ _blocks(plane - 128.0) @ _DCT.T
    coef = np.round(coef / table) * table
    return _unblocks(_DCT.T @ coef @ _DCT, h, w) + 128.0


def _pad_to(plane: np.ndarray, multiple: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


def _sample8(plane: np.ndarray) -> np.ndarray:
    # Stored samples are 8-bit at every stage of a baseline codec; keeping
    # them on the integer grid is what makes re-encoding settle instead of
    # drifting.
    return np.clip(np.round(plane), 0, 255)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode loss of baseline JPEG at an integer quality."""
    _check_image(image)
    ql, qc = quality_tables(quality)
    r, g, b = (np.clip(np.round(image.astype(np.float64) * 255.0), 0, 255))
    y = _sample8(0.299 * r + 0.587 * g + 0.114 * b)
    cb = _sample8(128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b)
    cr = _sample8(128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b)

    h, w = y.shape
    y2 = _sample8(_code_plane(_pad_to(y, 16), ql))[:h, :w]

    def chroma(plane: np.ndarray) -> np.ndarray:
        p = _pad_to(plane, 16)
        ph, pw = p.shape
        sub = _sample8(p.reshape(ph // 2, 2, pw // 2, 2).mean(axis=(1, 3)))
        sub = _sample8(_code_plane(sub, qc))
        return np.repeat(np.repeat(sub, 2, axis=0), 2, axis=1)[:h, :w]

    cb2, cr2 = chroma(cb), chroma(cr)
    r2 = y2 + 1.402 * (cr2 - 128.0)
    g2 = y2 - 0.344136286 * (cb2 - 128.0) - 0.714136286 * (cr2 - 128.0)
    b2 = y2 + 1.772 * (cb2 - 128.0)
    out = np.stack([r2, g2, b2])
    return (np.clip(np.round(out), 0, 255) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# palette reduction


def palette_quantize(image: np.ndarray, n_colors: int = 256) -> np.ndarray:
    """8-bit quantization, then median-cut reduction to ``n_colors``.

    Boxes split at the pixel-weighted median of their widest channel for
    log2(n_colors) rounds; each box maps to its mean color.
    """
    _check_image(image)
    u8 = np.clip(np.round(image.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    pixels = u8.reshape(3, -1).T
    colors, inverse, counts = np.unique(pixels, axis=0, return_inverse=True, return_counts=True)
    if len(colors) <= n_colors:
        return (u8 / 255.0).astype(np.float32)

    rounds = int(np.log2(n_colors))
    boxes = [np.arange(len(colors))]
    for _ in range(rounds):
        nxt = []
        for box in boxes:
            if len(box) < 2:
                nxt.append(box)
                continue
            vals = colors[box].astype(np.int64)
            ch = int(np.argmax(vals.max(axis=0) - vals.min(axis=0)))
            order = box[np.argsort(vals[:, ch], kind="stable")]
            cum = np.cumsum(counts[order])
            split = int(np.searchsorted(cum, cum[-1] / 2.0)) + 1
            split = min(max(split, 1), len(order) - 1)
            nxt.extend([order[:split], order[split:]])
        boxes = nxt

    mapped = np.zeros((len(colors), 3), dtype=np.uint8)
    for box in boxes:
        wsum = counts[box].astype(np.float64)
        mean = (colors[box] * wsum[:, None]).sum(axis=0) / wsum.sum()
        mapped[box] = np.clip(np.round(mean), 0, 255).astype(np.uint8)
    out = mapped[inverse].T.reshape(image.shape)
    return (out / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dispatch


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("expected a single (3, H, W) image")


def _resample_roundtrip(image: np.ndarray, kernel: str) -> np.ndarray:
    """Resample to the metric input size with `kernel`, then restore shape.

    The restoration step always duplicates samples (nearest) so that only
    the choice of downsampling kernel leaves a mark: averaging kernels
    compose back to the metric's own preprocessing, while subsampling
    kernels keep their aliasing.
    """
    h, w = image.shape[-2:]
    down_h = resize_matrix(h, EXTRACTOR_INPUT, kernel)
    down_w = resize_matrix(w, EXTRACTOR_INPUT, kernel)
    up_h = resize_matrix(EXTRACTOR_INPUT, h, "nearest")
    up_w = resize_matrix(EXTRACTOR_INPUT, w, "nearest")
    small = down_h @ image.astype(np.float64) @ down_w.T
    return np.clip(up_h @ small @ up_w.T, 0.0, 1.0).astype(np.float32)


def manipulate(image: np.ndarray, spec: ManipulationSpec) -> np.ndarray:
    """Apply one manipulation to a (3, H, W) image in [0, 1]."""
    _check_image(image)
    if spec.kind == "identity":
        return image.astype(np.float32, copy=True)
    if spec.kind == "jpeg":
        return jpeg_roundtrip(image, int(spec.value))
    if spec.kind == "resample":
        return _resample_roundtrip(image, str(spec.value))
    if spec.kind == "palette":
        return palette_quantize(image)
    factor = 1.0 + float(spec.value) / 100.0
    if spec.kind == "brightness":
        out = image.astype(np.float64) * factor
    else:
        out = (image.astype(np.float64) - 0.5) * factor + 0.5
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def manipulate_set(images: np.ndarray, spec: ManipulationSpec) -> np.ndarray:
    """Apply one manipulation across an (N, 3, H, W) set."""
    return np.stack([manipulate(img, spec) for img in images])
