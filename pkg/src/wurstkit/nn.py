"""Neural-network layers composed from the autodiff primitives.

Conventions: feature maps are (B, C, H, W); token sequences are (B, N, D).
Every constructor takes an explicit ``rng`` for weight init so model builds
are reproducible from a seed. Parameter dtype is float32 by default and
switchable to float64 for finite-difference tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backend import kernels as K


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)


class Module:
    """Parameter container with attribute-walk discovery.

    Attribute insertion order is stable, which keeps parameter names (and
    thus checkpoint layouts) deterministic for a given architecture.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{key}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def _walk_modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value._walk_modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._walk_modules()

    def set_training(self, mode: bool) -> None:
        for m in self._walk_modules():
            if hasattr(m, "training"):
                m.training = mode

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for m_name, m in self._named_modules():
            for b_name, buf in getattr(m, "_buffers", {}).items():
                state[f"{m_name}{b_name}"] = buf
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: p for name, p in self.named_parameters()}
        buffers = {}
        for m_name, m in self._named_modules():
            for b_name in getattr(m, "_buffers", {}):
                buffers[f"{m_name}{b_name}"] = (m, b_name)
        for name, arr in state.items():
            if name in own:
                if own[name].data.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: {own[name].data.shape} vs {arr.shape}")
                own[name].data = np.ascontiguousarray(arr, dtype=own[name].data.dtype)
            elif name in buffers:
                m, b_name = buffers[name]
                m._buffers[b_name] = np.ascontiguousarray(arr, dtype=m._buffers[b_name].dtype)
            else:
                raise KeyError(f"unknown tensor {name!r} in state dict")

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._named_modules(f"{prefix}{name}.{i}.")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for _, m in self._named_modules():
            for b_name, buf in getattr(m, "_buffers", {}).items():
                m._buffers[b_name] = buf.astype(dtype)
        return self


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = he_init(rng, (d_in, d_out), d_in, dtype)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class Conv2d(Module):
    """Standard convolution via patch unfolding + one matmul."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, pad: int = 0, bias: bool = True, zero_init: bool = False, dtype=np.float32):
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        fan_in = c_in * k * k
        if zero_init:
            w = np.zeros((fan_in, c_out), dtype=dtype)
        else:
            w = he_init(rng, (fan_in, c_out), fan_in, dtype)
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"Conv2d expected {self.c_in} channels, got {c}")
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            cols = x.reshape(b, c, h * w).transpose(0, 2, 1)  # (B, P, C)
        else:
            cols = _im2col_op(x, self.k, self.k, self.stride, self.pad)
        y = cols @ self.w  # (B, P, c_out)
        if self.b is not None:
            y = y + self.b
        return y.transpose(0, 2, 1).reshape(b, self.c_out, oh, ow)


def _im2col_op(x: Tensor, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    b, c, h, w = x.shape

    def vjp(g):
        return K.col2im(np.ascontiguousarray(g), c, h, w, kh, kw, stride, pad)

    return ad.make_op(K.im2col(x.data, kh, kw, stride, pad), (x,), (vjp,))


class ConvTranspose2d(Module):
    """Transposed convolution; exact adjoint of Conv2d with the same geometry."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 2, pad: int = 0, bias: bool = True, dtype=np.float32):
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        fan_in = c_in * k * k
        self.w = Parameter(he_init(rng, (c_in, c_out * k * k), fan_in, dtype))
        self.b = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def out_size(self, size: int) -> int:
        return (size - 1) * self.stride - 2 * self.pad + self.k

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"ConvTranspose2d expected {self.c_in} channels, got {c}")
        oh, ow = self.out_size(h), self.out_size(w)
        cols = x.reshape(b, c, h * w).transpose(0, 2, 1) @ self.w  # (B, P, c_out*k*k)
        y = _col2im_op(cols, self.c_out, oh, ow, self.k, self.k, self.stride, self.pad)
        if self.b is not None:
            y = y + self.b.reshape(1, self.c_out, 1, 1)
        return y


def _col2im_op(cols: Tensor, c: int, h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> Tensor:
    def vjp(g):
        return K.im2col(np.ascontiguousarray(g), kh, kw, stride, pad)

    return ad.make_op(K.col2im(cols.data, c, h, w, kh, kw, stride, pad), (cols,), (vjp,))


class DepthwiseConv2d(Module):
    """Per-channel k×k correlation, stride 1 (the 7×7 in the conv blocks)."""

    def __init__(self, channels: int, k: int, rng: np.random.Generator, pad: int | None = None, dtype=np.float32):
        self.k = k
        self.pad = (k - 1) // 2 if pad is None else pad
        self.w = Parameter(he_init(rng, (channels, k, k), k * k, dtype))
        self.b = Parameter(np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        w, pad = self.w, self.pad
        b, c, h, wd = x.shape

        def vjp_x(g):
            return K.depthwise_bwd_x(np.ascontiguousarray(g), w.data, h, wd, pad)

        def vjp_w(g):
            return K.depthwise_bwd_w(x.data, np.ascontiguousarray(g), self.k, self.k, pad)

        y = ad.make_op(K.depthwise_fwd(x.data, w.data, pad), (x, w), (vjp_x, vjp_w))
        return y + self.b.reshape(1, -1, 1, 1)


class LayerNorm(Module):
    """Normalizes over the last axis (channels-last layout)."""

    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float32):
        self.g = Parameter(np.ones(dim, dtype=dtype))
        self.b = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        xn = xc * ((var + self.eps) ** -0.5)
        return xn * self.g + self.b


class GRN(Module):
    """Global response normalization (channels-last); identity at init."""

    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float32):
        self.g = Parameter(np.zeros(dim, dtype=dtype))
        self.b = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        # x: (B, H, W, C); feature magnitude per channel across space
        gx = ad.sqrt((x * x).sum(axis=(1, 2), keepdims=True) + 1e-12)
        nx = gx / (gx.mean(axis=-1, keepdims=True) + self.eps)
        return x + self.g * (x * nx) + self.b


class BatchNorm2d(Module):
    """Batch normalization over (B, H, W) per channel with running stats."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        self.g = Parameter(np.ones(channels, dtype=dtype))
        self.b = Parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps
        self.momentum = momentum
        self.training = True
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
            m = self.momentum
            # Keep buffers at their declared dtype so checkpoints round-trip
            # bit-exactly; intermediate math may upcast.
            dt = self._buffers["running_mean"].dtype
            self._buffers["running_mean"] = ((1 - m) * self._buffers["running_mean"] + m * mu.data.reshape(-1)).astype(dt)
            self._buffers["running_var"] = ((1 - m) * self._buffers["running_var"] + m * var.data.reshape(-1)).astype(dt)
            xn = xc * ((var + self.eps) ** -0.5)
        else:
            mu = self._buffers["running_mean"].reshape(1, -1, 1, 1)
            sd = np.sqrt(self._buffers["running_var"] + self.eps).reshape(1, -1, 1, 1)
            xn = (x - mu) * (1.0 / sd)
        return xn * self.g.reshape(1, -1, 1, 1) + self.b.reshape(1, -1, 1, 1)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, scale: float = 0.02, dtype=np.float32):
        self.w = Parameter((rng.standard_normal((n, dim)) * scale).astype(dtype))

    def __call__(self, idx: np.ndarray) -> Tensor:
        return ad.gather_rows(self.w, idx)


class CrossAttention(Module):
    """Multi-head attention from query tokens onto a conditioning sequence.

    Queries come from (B, N, dim); keys/values from (B, M, kv_dim). The
    output projection is zero-initialized so a fresh block is a no-op on
    its residual path.
    """

    def __init__(self, dim: int, kv_dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError("attention width must divide evenly into heads")
        self.heads = heads
        self.dh = dim // heads
        self.q = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.k = Linear(kv_dim, dim, rng, bias=False, dtype=dtype)
        self.v = Linear(kv_dim, dim, rng, bias=False, dtype=dtype)
        self.out = Linear(dim, dim, rng, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        b, n, d = x.shape
        m = cond.shape[1]
        q = self.q(x).reshape(b, n, self.heads, self.dh).transpose(0, 2, 1, 3)
        k = self.k(cond).reshape(b, m, self.heads, self.dh).transpose(0, 2, 1, 3)
        v = self.v(cond).reshape(b, m, self.heads, self.dh).transpose(0, 2, 1, 3)
        att = ad.softmax((q @ k.transpose(0, 1, 3, 2)) * (self.dh**-0.5), axis=-1)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(y)


class TimestepEmbed(Module):
    """Sinusoidal features of t in [0, 1] through a 2-layer MLP."""

    def __init__(self, dim: int, rng: np.random.Generator, n_freq: int = 16, max_freq: float = 1000.0, dtype=np.float32):
        self.n_freq = n_freq
        self.freqs = np.exp(np.linspace(0.0, np.log(max_freq), n_freq))
        self.fc1 = Linear(2 * n_freq, dim, rng, dtype=dtype)
        self.fc2 = Linear(dim, dim, rng, dtype=dtype)
        self.dtype = dtype

    def __call__(self, t: np.ndarray) -> Tensor:
        t = np.atleast_1d(np.asarray(t, dtype=self.dtype))
        ang = t[:, None] * self.freqs[None, :]
        feats = Tensor(np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(self.dtype))
        return self.fc2(ad.gelu(self.fc1(feats)))


class FiLM(Module):
    """Linear timestep conditioning: x * (1 + scale) + shift per channel."""

    def __init__(self, channels: int, t_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.proj = Linear(t_dim, 2 * channels, rng, zero_init=True, dtype=dtype)
        self.channels = channels

    def __call__(self, x: Tensor, t_emb: Tensor) -> Tensor:
        sb = self.proj(t_emb)  # (B, 2C)
        scale = sb[:, : self.channels].reshape(-1, self.channels, 1, 1)
        shift = sb[:, self.channels :].reshape(-1, self.channels, 1, 1)
        return x * (1.0 + scale) + shift


class ConvNeXtBlock(Module):
    """Depthwise 7×7 → LayerNorm → 4× pointwise expansion → GELU → GRN →
    pointwise back, with a residual connection.

    ``extra_ch`` channels may be concatenated in front of the depthwise
    convolution (used for side conditioning); the pointwise stack maps the
    widened features back down to ``dim``.
    """

    def __init__(self, dim: int, rng: np.random.Generator, extra_ch: int = 0, k: int = 7, expand: int = 4, dtype=np.float32):
        total = dim + extra_ch
        self.dim = dim
        self.extra_ch = extra_ch
        self.dw = DepthwiseConv2d(total, k, rng, dtype=dtype)
        self.norm = LayerNorm(total, dtype=dtype)
        self.pw1 = Linear(total, expand * dim, rng, dtype=dtype)
        self.grn = GRN(expand * dim, dtype=dtype)
        self.pw2 = Linear(expand * dim, dim, rng, zero_init=True, dtype=dtype)

    def __call__(self, x: Tensor, extra: Tensor | None = None) -> Tensor:
        if (extra is not None) != bool(self.extra_ch):
            raise ValueError("conditioning channels do not match block configuration")
        h = ad.concat([x, extra], axis=1) if extra is not None else x
        h = self.dw(h)
        h = h.transpose(0, 2, 3, 1)  # to channels-last
        h = self.norm(h)
        h = self.pw1(h)
        h = ad.gelu(h)
        h = self.grn(h)
        h = self.pw2(h)
        return x + h.transpose(0, 3, 1, 2)


class Upsample2x(Module):
    """Nearest-neighbor ×2 spatial upsample."""

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape

        def vjp(g):
            return g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))

        data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
        return ad.make_op(data, (x,), (vjp,))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: (B, C, H, W) -> (B, C*r*r, H/r, W/r)."""
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial dims must divide by {r}")
    x = x.reshape(b, c, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(b, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: (B, C*r*r, H, W) -> (B, C, H*r, W*r)."""
    b, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count must divide by {r * r}")
    co = c // (r * r)
    x = x.reshape(b, co, r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return x.reshape(b, co, h * r, w * r)


# -- bicubic resize as a pair of constant interpolation matrices ----------


def _cubic_weight(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    w = np.where(
        ax <= 1.0,
        (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0,
        np.where(ax < 2.0, a * (ax**3 - 5.0 * ax**2 + 8.0 * ax - 4.0), 0.0),
    )
    return w


def resize_matrix(n_in: int, n_out: int, kind: str = "bicubic") -> np.ndarray:
    """(n_out, n_in) 1-D resampling operator, edge-clamped, rows sum to 1.

    ``bicubic`` uses the Catmull-Rom kernel (a = -0.5); ``bilinear`` the
    triangle kernel; ``nearest`` picks the closest source sample.
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        if kind == "nearest":
            j = min(n_in - 1, max(0, int(np.floor((i + 0.5) * scale))))
            m[i, j] = 1.0
            continue
        base = int(np.floor(src))
        frac = src - base
        if kind == "bicubic":
            taps = range(-1, 3)
            weights = _cubic_weight(np.array([frac + 1.0, frac, 1.0 - frac, 2.0 - frac]))
        elif kind == "bilinear":
            taps = range(0, 2)
            weights = np.array([1.0 - frac, frac])
        else:
            raise ValueError(f"unknown resize kind {kind!r}")
        for tap, wgt in zip(taps, weights):
            j = min(n_in - 1, max(0, base + tap))
            m[i, j] += wgt
    return m


_RESIZE_CACHE: dict[tuple, np.ndarray] = {}


def _cached_matrix(n_in: int, n_out: int, kind: str, dtype) -> np.ndarray:
    key = (n_in, n_out, kind, np.dtype(dtype).str)
    if key not in _RESIZE_CACHE:
        _RESIZE_CACHE[key] = resize_matrix(n_in, n_out, kind).astype(dtype)
    return _RESIZE_CACHE[key]


def resize2d(x: Tensor, out_h: int, out_w: int, kind: str = "bicubic") -> Tensor:
    """Separable resample of (B, C, H, W) to (B, C, out_h, out_w).

    Implemented as two constant matrix products, so it is differentiable
    through the autodiff matmul and its adjoint is exact.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be at least 1x1")
    b, c, h, w = x.shape
    rh = Tensor(_cached_matrix(h, out_h, kind, x.dtype))
    rw_t = Tensor(_cached_matrix(w, out_w, kind, x.dtype).T)
    return (rh @ x) @ rw_t


def mse(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).mean()
