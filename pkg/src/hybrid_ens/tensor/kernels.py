"""Backend selection for the hot kernels (selective scan, depthwise 3x3 conv).

The compiled extension ``_kernels`` is used when it has been built; otherwise
the numpy module ``_kernels_py``.  ``ENS_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py as python_backend

try:
    if os.environ.get("ENS_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _kernels as compiled_backend  # type: ignore[attr-defined]
except ImportError:
    compiled_backend = None

_active = compiled_backend or python_backend


def backend_name() -> str:
    return "cython" if _active is compiled_backend and compiled_backend is not None else "python"


def set_backend(name: str) -> None:
    """Switch between ``"cython"`` and ``"python"`` at runtime."""
    global _active
    if name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernel extension is not built")
        _active = compiled_backend
    elif name == "python":
        _active = python_backend
    else:
        raise ValueError(f"unknown backend {name!r}")


def active():
    return _active
