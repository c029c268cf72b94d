"""Decoupled-weight-decay optimizer with linear learning-rate warmup."""

from __future__ import annotations

import numpy as np

from .. import nn


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp: 0 at step 0, ``base_lr`` from ``warmup_steps`` on."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


class AdamW:
    """Adam with weight decay applied directly to parameters.

    Update at 0-based step k (lr taken from the warmup ramp at k):

        m <- b1*m + (1-b1)*g            v <- b2*v + (1-b2)*g^2
        p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)

    with the usual 1/(1-b^t) bias corrections. State stays float32 so a
    checkpointed optimizer resumes bit-exactly.
    """

    def __init__(
        self,
        params: list[nn.Parameter],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        warmup_steps: int = 0,
    ):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.warmup_steps = int(warmup_steps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        return warmup_lr(self.t, self.lr, self.warmup_steps)

    def step(self) -> float:
        """Apply one update; returns the learning rate used."""
        lr = self.current_lr()
        b1, b2 = self.betas
        t = self.t + 1
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype, copy=False)
        self.t = t
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_tensors(self, names: list[str], prefix: str = "opt.") -> dict[str, np.ndarray]:
        """Flatten m/v state into checkpoint tensors keyed by parameter name."""
        if len(names) != len(self.params):
            raise ValueError("one name per parameter required")
        out: dict[str, np.ndarray] = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"{prefix}{name}.m"] = m
            out[f"{prefix}{name}.v"] = v
        return out

    def load_state_tensors(
        self, names: list[str], tensors: dict[str, np.ndarray], t: int, prefix: str = "opt."
    ) -> None:
        if len(names) != len(self.params):
            raise ValueError("one name per parameter required")
        for i, name in enumerate(names):
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = tensors[f"{prefix}{name}.{slot}"]
                if arr.shape != store[i].shape:
                    raise ValueError(f"optimizer state shape mismatch for {name}.{slot}")
                store[i] = np.ascontiguousarray(arr, dtype=store[i].dtype)
        self.t = int(t)
