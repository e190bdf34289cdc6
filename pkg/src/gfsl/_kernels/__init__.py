"""Hot kernels with a compiled backend and a pure fallback.

The Cython extension is used when it was built and importable; setting
``GFSL_PURE_PYTHON=1`` forces the fallback. Both backends are required to
agree exactly, so results never depend on which one is active.
"""

import importlib
import os

from . import _pure


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pure
    if name == "cython":
        return importlib.import_module(f"{__name__}._fast")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("GFSL_PURE_PYTHON", "") not in ("", "0"):
        return "python", _pure
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", _pure


BACKEND, _impl = _select()

draw_episode = _impl.draw_episode
auc_rank = _impl.auc_rank

__all__ = ["BACKEND", "auc_rank", "draw_episode", "load_backend"]
