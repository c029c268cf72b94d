"""Schedule and diffusion-step mathematics shared by both latent stages.

Everything here is a pure function of its inputs; random draws come in as
explicit arguments. The helpers accept either plain ndarrays or autodiff
:class:`~wurstkit.autodiff.Tensor` values, so the same formulas serve the
training losses (gradients on) and the samplers (gradients off).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

AB_EPS = 1e-5
#: lower end of the sampling grid; keeps alpha_bar(t_1) strictly below 1
GRID_T_MIN = 1e-4


@dataclass(frozen=True)
class ShapeSpec:
    """Pixel and latent geometry for one compression stage.

    ``f`` ties the two: a (H, W, C) image maps to a (z, h, w) latent with
    H = f*h and W = f*w exactly.
    """

    H: int
    W: int
    C: int
    h: int
    w: int
    z: int
    f: int

    def __post_init__(self):
        dims = (self.H, self.W, self.C, self.h, self.w, self.z)
        if any(d < 1 for d in dims) or self.f <= 0:
            raise ValueError("all dimensions must be >= 1 and f > 0")
        if self.H != self.f * self.h or self.W != self.f * self.w:
            raise ValueError(f"pixel dims ({self.H},{self.W}) must equal f*latent dims ({self.f}*{self.h},{self.f}*{self.w})")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.C, self.H, self.W)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.z, self.h, self.w)

    @classmethod
    def from_image(cls, H: int, W: int, C: int, f: int, z: int) -> "ShapeSpec":
        if H % f or W % f:
            raise ValueError(f"image dims ({H},{W}) not divisible by f={f}")
        return cls(H=H, W=W, C=C, h=H // f, w=W // f, z=z, f=f)


def check_timestep(t) -> np.ndarray:
    """Validate t in [0, 1]; returns t as a float64 scalar or array."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("timestep outside [0, 1]")
    return arr


@dataclass(frozen=True)
class CosineSchedule:
    """Squared-cosine noise schedule with a small offset.

    alpha_bar(t) = cos²(((t+s)/(1+s))·π/2) / cos²((s/(1+s))·π/2)

    The denominator normalizes alpha_bar(0) to exactly 1; the offset keeps
    the curve from flattening completely near t=0.
    """

    s: float = 0.008

    def alpha_bar(self, t):
        t = check_timestep(t)
        base = np.cos((self.s / (1.0 + self.s)) * np.pi / 2.0) ** 2
        val = np.cos(((t + self.s) / (1.0 + self.s)) * np.pi / 2.0) ** 2 / base
        # guard rounding at the endpoints so the (0, 1] contract holds
        return np.clip(val, np.finfo(np.float64).tiny, 1.0)


@dataclass(frozen=True)
class ScheduleGrid:
    """Ordered discretization t_0=0 < t_1 < ... < t_N=1 of a schedule.

    Steps 1..N are uniformly spaced ending at 1, with t_1 offset to at
    least GRID_T_MIN so no interior point collides with the degenerate
    alpha_bar=1 endpoint. t_0 is exactly 0, which makes the final
    denoising step land on a zero-noise state.
    """

    schedule: CosineSchedule
    steps: int
    ts: np.ndarray = field(init=False, repr=False)
    abars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("grid needs at least one step")
        ts = np.zeros(self.steps + 1, dtype=np.float64)
        i = np.arange(1, self.steps + 1, dtype=np.float64)
        ts[1:] = GRID_T_MIN + (1.0 - GRID_T_MIN) * (i / self.steps)
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "abars", self.schedule.alpha_bar(ts))

    def __len__(self) -> int:
        return self.steps

    def alpha(self, i: int) -> float:
        """Per-step alpha_i = alpha_bar(t_i) / alpha_bar(t_{i-1})."""
        if not 1 <= i <= self.steps:
            raise ValueError(f"step index {i} outside 1..{self.steps}")
        return float(self.abars[i] / self.abars[i - 1])


def forward_noise(x0, abar_t, eps):
    """Noising map: sqrt(abar)*x0 + sqrt(1-abar)*eps.

    ``abar_t`` is the schedule value (scalar or per-sample 1-D array);
    ``x0``/``eps`` may be ndarrays or Tensors of identical shape.
    """
    if _shape(x0) != _shape(eps):
        raise ValueError("x0 and eps must have the same shape")
    a = np.asarray(abar_t, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape((-1,) + (1,) * (len(_shape(x0)) - 1))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def p2_weight(abar_t):
    """Loss emphasis (1-abar)/(1+abar): zero at no noise, toward 1 at full noise."""
    a = np.asarray(abar_t, dtype=np.float64)
    return (1.0 - a) / (1.0 + a)


def ab_to_epsilon(x_t, a, b):
    """Recover the noise estimate from the two-headed prediction.

    eps_bar = (x_t - A) / (|1 - B| + 1e-5). With zero-initialized heads
    (A=B=0) this starts as x_t itself, scaled by 1/(1+1e-5).
    """
    if _shape(x_t) != _shape(a) or _shape(x_t) != _shape(b):
        raise ValueError("x_t, A, B must have the same shape")
    return (x_t - a) / (abs(1.0 - b) + AB_EPS)


def weighted_loss(eps, eps_bar, abar_t):
    """Mean-squared noise residual scaled by the p2 emphasis.

    With per-sample ``abar_t`` the weight applies per batch row before the
    global mean, so batches mixing noise levels stay balanced.
    """
    if _shape(eps) != _shape(eps_bar):
        raise ValueError("eps and eps_bar must have the same shape")
    w = p2_weight(abar_t)
    if np.ndim(w) == 1:
        w = w.reshape((-1,) + (1,) * (len(_shape(eps)) - 1))
    d = eps_bar - eps
    return (w * d * d).mean()


def ddpm_step_values(x_t, eps_bar, abar_t: float, abar_prev: float, noise):
    """One reverse transition given raw schedule values.

    x_prev = (x_t - ((1-alpha)/sqrt(1-abar_t))*eps_bar)/sqrt(alpha)
             + sqrt((1-alpha)(1-abar_prev)/(1-abar_t)) * noise
    with alpha = abar_t/abar_prev. Pass ``noise=None`` for the
    deterministic (zero-variance) transition.
    """
    alpha = abar_t / abar_prev
    mean = (x_t - ((1.0 - alpha) / np.sqrt(1.0 - abar_t)) * eps_bar) * (1.0 / np.sqrt(alpha))
    if noise is None:
        return mean
    sigma = np.sqrt((1.0 - alpha) * (1.0 - abar_prev) / (1.0 - abar_t))
    return mean + sigma * noise


def ddpm_step(x_t, eps_bar, i: int, grid: ScheduleGrid, noise):
    """Reverse step from grid point i to i-1; the step onto t_0 is noiseless."""
    if i < 1:
        raise ValueError("step index must be >= 1 (t_0 has no predecessor)")
    if i > grid.steps:
        raise ValueError(f"step index {i} beyond grid size {grid.steps}")
    if _shape(x_t) != _shape(eps_bar):
        raise ValueError("x_t and eps_bar must have the same shape")
    if i == 1:
        noise = None
    return ddpm_step_values(x_t, eps_bar, float(grid.abars[i]), float(grid.abars[i - 1]), noise)


def cfg_combine(eps_uncond, eps_cond, w: float):
    """Guidance mix eps_uncond + w*(eps_cond - eps_uncond).

    w=0 returns the unconditional prediction, w=1 the conditional one;
    larger w extrapolates toward the conditioning signal.
    """
    if w < 0:
        raise ValueError("guidance scale must be >= 0")
    if _shape(eps_uncond) != _shape(eps_cond):
        raise ValueError("guidance inputs must have the same shape")
    return eps_uncond + w * (eps_cond - eps_uncond)


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance scale plus which conditioning channels the unconditional
    pass replaces with their learned null value."""

    scale: float
    null_channels: tuple[str, ...] = ("text",)

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")

    @property
    def needs_second_pass(self) -> bool:
        """True when guided sampling must run both a conditional and an
        unconditional model evaluation."""
        return self.scale != 0.0 and self.scale != 1.0


def _shape(x) -> tuple:
    return x.shape if isinstance(x, (np.ndarray, Tensor)) else np.shape(x)
