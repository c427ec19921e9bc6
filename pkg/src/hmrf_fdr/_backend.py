"""Sweep-kernel backend selection.

The compiled Cython kernels are used when the extension built successfully;
otherwise the numpy fallback takes over. ``HMRF_BACKEND=python`` forces the
fallback, ``HMRF_BACKEND=compiled`` fails loudly if the extension is missing.
Both backends produce bit-identical chains for a fixed seed.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (default: env var or best)."""
    if name is None:
        name = os.environ.get("HMRF_BACKEND", "").strip().lower() or None
    if name in (None, "auto"):
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels requested but the extension is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}, expected 'auto', 'python' or 'compiled'")


def backend_name(name: str | None = None) -> str:
    """Name of the backend that get_backend(name) resolves to."""
    return "compiled" if get_backend(name) is _compiled and _compiled is not None else "python"


def have_compiled() -> bool:
    return _compiled is not None
