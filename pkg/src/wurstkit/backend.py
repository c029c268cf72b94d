"""Kernel backend selection.

The numeric hot loops (patch unfolding, depthwise convolution, codebook
search) exist twice: a numba-jitted version and a pure-numpy fallback.
The active path is chosen once at import time from the ``WURSTKIT_JIT``
environment variable:

* ``WURSTKIT_JIT=0`` (also ``off``/``numpy``) — force the numpy fallback.
* ``WURSTKIT_JIT=1`` (also ``on``/``numba``) — require the jitted path;
  raises if numba cannot be imported.
* unset or ``auto`` — use numba when importable, numpy otherwise.

``wurstkit bench kernels`` times both paths against each other.
"""

import os
from types import ModuleType

from . import _kernels_numpy

KERNEL_NAMES = ("im2col", "col2im", "depthwise_fwd", "depthwise_bwd_x", "depthwise_bwd_w", "nearest_code")

_FORCE_OFF = ("0", "off", "numpy")
_FORCE_ON = ("1", "on", "numba")


def _load_numba_kernels() -> ModuleType | None:
    try:
        from . import _kernels_numba
    except ImportError:
        return None
    return _kernels_numba


def _select() -> tuple[str, ModuleType]:
    flag = os.environ.get("WURSTKIT_JIT", "auto").strip().lower()
    if flag in _FORCE_OFF:
        return "numpy", _kernels_numpy
    jitted = _load_numba_kernels()
    if flag in _FORCE_ON:
        if jitted is None:
            raise RuntimeError("WURSTKIT_JIT requests the jitted backend but numba is not importable")
        return "numba", jitted
    if flag != "auto":
        raise RuntimeError(f"unrecognized WURSTKIT_JIT value: {flag!r}")
    if jitted is None:
        return "numpy", _kernels_numpy
    return "numba", jitted


BACKEND_NAME, kernels = _select()


def active_backend() -> str:
    """Name of the kernel path selected at import: 'numba' or 'numpy'."""
    return BACKEND_NAME


def backend_module(name: str) -> ModuleType:
    """Fetch a kernel module by name regardless of the active selection."""
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        jitted = _load_numba_kernels()
        if jitted is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return jitted
    raise ValueError(f"unknown backend {name!r}")


def set_num_threads(n: int) -> None:
    """Cap worker threads for the jitted kernels (no-op on the numpy path)."""
    if BACKEND_NAME == "numba":
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
