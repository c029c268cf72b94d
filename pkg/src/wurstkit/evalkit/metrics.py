"""Scalar image metrics: reconstruction fidelity and color-faithfulness.

The red-dominance test checks whether generations for red-object
captions put more energy in the red channel than chance would. On the
synthetic corpus exactly one of the four colors is strictly
red-dominant (pure yellow ties red and green), so the null rate is 1/4;
the p-value is the exact binomial upper tail.
"""

from __future__ import annotations

import math

import numpy as np


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; infinite for identical inputs."""
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def is_red_dominant(image: np.ndarray) -> bool:
    """True when the red channel mean strictly beats both others."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("expected a (3, H, W) image")
    r, g, b = image.mean(axis=(1, 2))
    return bool(r > g and r > b)


def binomial_tail(hits: int, n: int, p: float) -> float:
    """Exact P[X >= hits] for X ~ Binomial(n, p)."""
    if not 0 <= hits <= n:
        raise ValueError("hits must lie in [0, n]")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if hits == 0:
        return 1.0
    total = 0.0
    for k in range(hits, n + 1):
        total += math.comb(n, k) * p**k * (1.0 - p) ** (n - k)
    return min(total, 1.0)


def red_dominance_test(images: np.ndarray, base_rate: float = 0.25) -> dict:
    """Count red-dominant images and the chance of at least that many.

    Returns ``{"n", "hits", "rate", "base_rate", "p_value"}`` where the
    p-value is the exact binomial upper tail at ``base_rate``.
    """
    n = len(images)
    if n == 0:
        raise ValueError("empty image set")
    hits = sum(is_red_dominant(img) for img in images)
    return {
        "n": n,
        "hits": hits,
        "rate": hits / n,
        "base_rate": base_rate,
        "p_value": binomial_tail(hits, n, base_rate),
    }
