"""Fréchet distance and label-entropy score over feature statistics.

FeatureStats accumulates mean and covariance in one pass (Welford's
update, plus the parallel-merge form so partial accumulations combine
associatively). The distance uses the closed form

    |mu1 - mu2|^2 + Tr(S1 + S2 - 2*(S1 S2)^(1/2))

with the matrix square root computed by eigendecomposition of the
symmetrized product sqrt(S1) S2 sqrt(S1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# Eigenvalues this far below zero are treated as rounding noise and
# clamped; anything lower means the inputs are not valid covariances.
EIG_CLAMP_TOL = -1e-8


@dataclass
class FeatureStats:
    """Streaming mean/covariance accumulator for d-dimensional features."""

    dim: int
    count: int = 0
    mean: np.ndarray = field(default=None)
    _m2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("feature dimension must be positive")
        if self.mean is None:
            self.mean = np.zeros(self.dim, dtype=np.float64)
        if self._m2 is None:
            self._m2 = np.zeros((self.dim, self.dim), dtype=np.float64)

    def update(self, x: np.ndarray) -> None:
        """Fold in one sample (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            self.merge(FeatureStats.from_batch(x))
            return
        if x.shape != (self.dim,):
            raise ValueError(f"expected a ({self.dim},) sample, got {x.shape}")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + np.outer(delta, x - self.mean)

    def merge(self, other: "FeatureStats") -> None:
        """Absorb another accumulator; associative across partitions."""
        if other.dim != self.dim:
            raise ValueError("cannot merge stats of different dimensions")
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self._m2 = other._m2.copy()
            return
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self._m2 = self._m2 + other._m2 + np.outer(delta, delta) * (self.count * other.count / n)
        self.count = n

    @classmethod
    def from_batch(cls, x: np.ndarray) -> "FeatureStats":
        """One-shot stats of an (n, d) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("expected an (n, d) batch")
        out = cls(dim=x.shape[1])
        out.count = x.shape[0]
        out.mean = x.mean(axis=0) if len(x) else out.mean
        xc = x - out.mean
        out._m2 = xc.T @ xc
        return out

    @property
    def covariance(self) -> np.ndarray:
        """Sample covariance (ddof=1), symmetrized against rounding drift."""
        if self.count < 2:
            raise ValueError("covariance needs at least two samples")
        if self.count < self.dim:
            warnings.warn(
                f"{self.count} samples for {self.dim}-dim features: covariance is rank-deficient",
                stacklevel=2,
            )
        c = self._m2 / (self.count - 1)
        return (c + c.T) / 2.0


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = _clamp_eigvals(vals, "covariance")
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clamp_eigvals(vals: np.ndarray, what: str) -> np.ndarray:
    if vals.min(initial=0.0) < EIG_CLAMP_TOL:
        raise ValueError(f"{what} has eigenvalue {vals.min():.3e} below the {EIG_CLAMP_TOL} tolerance")
    return np.clip(vals, 0.0, None)


def fid(stats_a: FeatureStats, stats_b: FeatureStats) -> float:
    """Fréchet distance between two Gaussian fits; symmetric, >= 0."""
    if stats_a.dim != stats_b.dim:
        raise ValueError(f"feature dims differ: {stats_a.dim} vs {stats_b.dim}")
    mu1, mu2 = stats_a.mean, stats_b.mean
    s1, s2 = stats_a.covariance, stats_b.covariance
    for arr in (mu1, mu2, s1, s2):
        if not np.isfinite(arr).all():
            raise ValueError("non-finite feature statistics")
    d = mu1 - mu2
    root1 = _psd_sqrt(s1)
    # Tr sqrtm(S1 S2) equals Tr sqrtm(sqrt(S1) S2 sqrt(S1)), and the
    # latter matrix is symmetric, so a plain eigendecomposition works.
    inner = root1 @ s2 @ root1
    vals = _clamp_eigvals(np.linalg.eigvalsh(inner), "covariance product")
    value = float(d @ d + np.trace(s1) + np.trace(s2) - 2.0 * np.sqrt(vals).sum())
    return max(value, 0.0)


def inception_score(probs: np.ndarray) -> float:
    """exp(mean KL(row || column-mean)) over per-image class probabilities.

    Rows must be probability vectors; the result lies in [1, #classes].
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("expected a nonempty (n, k) probability matrix")
    if not np.isfinite(p).all() or (p < 0).any():
        raise ValueError("probabilities must be finite and nonnegative")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("each row must sum to 1 within 1e-6")
    marginal = p.mean(axis=0)
    # 0*log(0) terms contribute nothing.
    mask = p > 0
    logs = np.zeros_like(p)
    logs[mask] = np.log(p[mask]) - np.log(marginal[np.nonzero(mask)[1]])
    kl = (p * logs).sum(axis=1)
    return float(np.exp(kl.mean()))
