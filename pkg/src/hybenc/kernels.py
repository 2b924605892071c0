"""Scan backend selection.

The compiled Cython kernel is used when it built successfully; otherwise
the numpy per-step loop takes over. ``HYBENC_SCAN_BACKEND=numpy|cython``
forces a choice (useful for the kernel benchmark and for debugging).
"""

import os

from . import _scan_np

_forced = os.environ.get("HYBENC_SCAN_BACKEND", "").strip().lower()

_backend = None
if _forced in ("", "cython"):
    try:
        from . import _scan_cy as _backend  # type: ignore
    except ImportError:
        if _forced == "cython":
            raise
        _backend = None
if _backend is None:
    _backend = _scan_np

scan_forward = _backend.scan_forward
scan_backward = _backend.scan_backward


def backend_name() -> str:
    return _backend.NAME


def get_backend(name: str):
    """Return a specific backend module by name ("numpy" or "cython")."""
    if name == "numpy":
        return _scan_np
    if name == "cython":
        from . import _scan_cy

        return _scan_cy
    raise ValueError(f"unknown scan backend {name!r}")


# FLOP accounting for the scan (multiply+add pairs counted as 2 flops each,
# exp as 1); linear in T by construction, asserted in tests.
_flops = 0


def scan_flops(B: int, T: int, Dm: int, N: int) -> int:
    per_state = 7  # exp, decay mul, inj mul x2, add, readout mul, readout add
    return B * T * Dm * (N * per_state + 3)


def reset_flop_counter() -> None:
    global _flops
    _flops = 0


def add_flops(n: int) -> None:
    global _flops
    _flops += n


def flop_count() -> int:
    return _flops
