"""Checkpoint container: JSON manifest plus little-endian f32 tensor blocks.

File layout:

    bytes 0..8    magic ``WKPT0001``
    bytes 8..16   manifest byte length, unsigned 64-bit little-endian
    manifest      UTF-8 JSON, keys sorted, compact separators
    tensors       concatenated raw ``<f4`` blocks in manifest order

The manifest carries run metadata (stage, step, config snapshot, RNG
state) plus the derived ``tensors`` table and a SHA-256 of the tensor
section. Writes go through a temp file and ``os.replace`` so a crash
never leaves a partial file under the final name.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"WKPT0001"
_HEADER = struct.Struct("<Q")
# Keys save() derives from the tensor dict; user manifests may not set them.
_DERIVED_KEYS = ("tensors", "tensor_sha256")


@dataclass
class Checkpoint:
    """In-memory checkpoint: metadata dict plus named f32 arrays.

    Tensor insertion order is the on-disk block order, so a load/save
    round trip is byte identical.
    """

    manifest: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def stage(self) -> str | None:
        return self.manifest.get("stage")

    @property
    def step(self) -> int:
        return int(self.manifest.get("step", 0))


def _as_f32(name: str, arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype="<f4")
    if out.size != int(np.prod(out.shape, dtype=np.int64)):
        raise ValueError(f"tensor {name!r} has inconsistent size")
    return out


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Serialize and atomically replace ``path``."""
    for key in _DERIVED_KEYS:
        if key in ckpt.manifest:
            raise ValueError(f"manifest key {key!r} is derived; remove it")
    blocks = []
    table = []
    for name, arr in ckpt.tensors.items():
        if not isinstance(name, str) or not name:
            raise ValueError("tensor names must be non-empty strings")
        f32 = _as_f32(name, arr)
        blocks.append(f32.tobytes())
        table.append({"name": name, "shape": list(f32.shape)})
    body = b"".join(blocks)
    manifest = dict(ckpt.manifest)
    manifest["tensors"] = table
    manifest["tensor_sha256"] = hashlib.sha256(body).hexdigest()
    try:
        mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    except TypeError as exc:
        raise ValueError(f"manifest is not JSON-serializable: {exc}") from None

    path = os.fspath(path)
    payload = MAGIC + _HEADER.pack(len(mbytes)) + mbytes + body
    atomic_write_bytes(path, payload)


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via temp file + rename; readers never observe a partial file."""
    directory = os.path.dirname(path) or "."
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp.{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Parse and validate a checkpoint file.

    Raises ValueError on a bad magic, truncated sections, a tensor-hash
    mismatch, duplicate names, or trailing bytes.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    (mlen,) = _HEADER.unpack_from(raw, off)
    off += _HEADER.size
    if len(raw) < off + mlen:
        raise ValueError(f"{path}: truncated manifest")
    manifest = json.loads(raw[off : off + mlen].decode("utf-8"))
    off += mlen

    table = manifest.pop("tensors", [])
    want_sha = manifest.pop("tensor_sha256", None)
    body = raw[off:]
    if want_sha is not None and hashlib.sha256(body).hexdigest() != want_sha:
        raise ValueError(f"{path}: tensor section hash mismatch")

    tensors: dict[str, np.ndarray] = {}
    pos = 0
    for rec in table:
        name = rec["name"]
        if name in tensors:
            raise ValueError(f"{path}: duplicate tensor name {name!r}")
        shape = tuple(int(s) for s in rec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if pos + nbytes > len(body):
            raise ValueError(f"{path}: truncated tensor section at {name!r}")
        tensors[name] = (
            np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=pos)
            .reshape(shape)
            .copy()
        )
        pos += nbytes
    if pos != len(body):
        raise ValueError(f"{path}: {len(body) - pos} trailing bytes after tensors")
    return Checkpoint(manifest=manifest, tensors=tensors)


def interpolate_weights(a: Checkpoint, b: Checkpoint, lam: float) -> Checkpoint:
    """Per-tensor linear blend (1-lam)*a + lam*b.

    Endpoints are special-cased to bitwise copies. The merged manifest
    keeps ``a``'s metadata and records the blend provenance.
    """
    lam = float(lam)
    if set(a.tensors) != set(b.tensors):
        only_a = sorted(set(a.tensors) - set(b.tensors))
        only_b = sorted(set(b.tensors) - set(a.tensors))
        raise ValueError(f"tensor name mismatch: only_a={only_a[:3]} only_b={only_b[:3]}")
    out: dict[str, np.ndarray] = {}
    for name, ta in a.tensors.items():
        tb = b.tensors[name]
        if ta.shape != tb.shape:
            raise ValueError(f"shape mismatch for {name!r}: {ta.shape} vs {tb.shape}")
        if lam == 0.0:
            out[name] = ta.copy()
        elif lam == 1.0:
            out[name] = tb.copy()
        else:
            mixed = (1.0 - lam) * ta.astype(np.float64) + lam * tb.astype(np.float64)
            out[name] = mixed.astype(np.float32)
    manifest = {k: v for k, v in a.manifest.items() if k not in _DERIVED_KEYS}
    manifest["merge"] = {
        "lambda": lam,
        "parent_steps": [a.step, b.step],
        "parent_stages": [a.stage, b.stage],
    }
    return Checkpoint(manifest=manifest, tensors=out)


def rng_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a numpy Generator."""
    return _jsonify(gen.bit_generator.state)


def restore_rng(state: dict) -> np.random.Generator:
    """Rebuild a Generator from :func:`rng_state` output."""
    name = state.get("bit_generator", "PCG64")
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
