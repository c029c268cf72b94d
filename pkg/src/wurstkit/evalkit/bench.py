"""Inference-cost and kernel benchmarks.

``latency_bench`` times full generations through a trained bundle,
splitting wall time by phase and recording the exact denoiser
forward-pass counts from the generation records. ``kernel_bench`` races
the jitted kernels against the pure-numpy fallbacks on a fixed
convolution-shaped workload.
"""

from __future__ import annotations

import io
import json
import os
import time

import numpy as np

from .. import backend
from ..training.checkpoint import atomic_write_bytes


def latency_bench(
    pipe,
    cfg,
    batch_sizes: tuple[int, ...] = (1, 4),
    prompt: str = "large red circle on white",
) -> list[dict]:
    """Generation latency per batch size.

    Each row carries the batch size, total wall seconds, per-phase wall
    seconds summed over the batch, per-phase forward-pass counts, and
    seconds per image.
    """
    import dataclasses

    rows = []
    for batch in batch_sizes:
        if batch < 1:
            raise ValueError("batch sizes must be positive")
        phase_time = {"stage_c": 0.0, "stage_b": 0.0, "decode": 0.0}
        passes = {"stage_c": 0, "stage_b": 0}
        t0 = time.perf_counter()
        for i in range(batch):
            out = pipe.generate(prompt, dataclasses.replace(cfg, seed=cfg.seed + i))
            for key in phase_time:
                phase_time[key] += out.record["wall_time_s"].get(key, 0.0)
            for key in passes:
                passes[key] += out.record["model_evals"][key]
        wall = time.perf_counter() - t0
        rows.append(
            {
                "batch": batch,
                "wall_s": round(wall, 6),
                "per_image_s": round(wall / batch, 6),
                "phase_s": {k: round(v, 6) for k, v in phase_time.items()},
                "passes": dict(passes),
                "passes_total": passes["stage_c"] + passes["stage_b"],
            }
        )
    return rows


def write_latency_report(rows: list[dict], out_dir: str | os.PathLike) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(os.fspath(out_dir), "latency.csv")
    json_path = os.path.join(os.fspath(out_dir), "latency.json")
    buf = io.StringIO()
    buf.write("batch,wall_s,per_image_s,stage_c_s,stage_b_s,decode_s,passes_c,passes_b,passes_total\n")
    for r in rows:
        p = r["phase_s"]
        buf.write(
            f"{r['batch']},{r['wall_s']},{r['per_image_s']},{p['stage_c']},{p['stage_b']},"
            f"{p['decode']},{r['passes']['stage_c']},{r['passes']['stage_b']},{r['passes_total']}\n"
        )
    atomic_write_bytes(csv_path, buf.getvalue().encode())
    atomic_write_bytes(json_path, json.dumps(rows, indent=2).encode() + b"\n")
    return csv_path, json_path


def _kernel_workload(rng: np.random.Generator) -> dict[str, tuple]:
    x = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    wd = rng.standard_normal((16, 3, 3)).astype(np.float32)
    gy = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    vecs = rng.standard_normal((4096, 8)).astype(np.float32)
    book = rng.standard_normal((256, 8)).astype(np.float32)
    cols = rng.standard_normal((8, 16 * 16, 16 * 9)).astype(np.float32)
    return {
        "im2col": (x, 3, 3, 2, 1),
        "col2im": (cols, 16, 32, 32, 3, 3, 2, 1),
        "depthwise_fwd": (x, wd, 1),
        "depthwise_bwd_x": (gy, wd, 32, 32, 1),
        "depthwise_bwd_w": (x, gy, 3, 3, 1),
        "nearest_code": (vecs, book),
    }


def kernel_bench(repeats: int = 5, warmup: int = 1) -> list[dict]:
    """Race each hot kernel on both backends; numba rows may be absent.

    Returns one row per kernel and backend with the best-of wall time in
    milliseconds, so jit compilation (absorbed by warmup) does not skew
    the numbers.
    """
    backends = {"numpy": backend.backend_module("numpy")}
    try:
        backends["numba"] = backend.backend_module("numba")
    except RuntimeError:
        pass
    args = _kernel_workload(np.random.default_rng(0))
    rows = []
    for name in backend.KERNEL_NAMES:
        for bname, mod in backends.items():
            fn = getattr(mod, name)
            for _ in range(warmup):
                fn(*args[name])
            best = min(_time_once(fn, args[name]) for _ in range(repeats))
            rows.append({"kernel": name, "backend": bname, "ms": round(best * 1e3, 4)})
    return rows


def _time_once(fn, args) -> float:
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def write_kernel_report(rows: list[dict], out_dir: str | os.PathLike) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(os.fspath(out_dir), "kernels.csv")
    json_path = os.path.join(os.fspath(out_dir), "kernels.json")
    buf = io.StringIO()
    buf.write("kernel,backend,ms\n")
    for r in rows:
        buf.write(f"{r['kernel']},{r['backend']},{r['ms']}\n")
    atomic_write_bytes(csv_path, buf.getvalue().encode())
    atomic_write_bytes(json_path, json.dumps(rows, indent=2).encode() + b"\n")
    return csv_path, json_path
