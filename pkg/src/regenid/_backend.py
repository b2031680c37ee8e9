"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
``REGENID_BACKEND=python`` forces the fallback, ``REGENID_BACKEND=compiled``
makes a missing extension an ImportError instead of a silent fallback.
"""
import os

from . import _scan_py


def load(name: str = "auto"):
    """Return the kernel module for ``name`` in {"auto", "compiled", "python"}."""
    if name == "python":
        return _scan_py
    try:
        from . import _scan_ext
    except ImportError:
        if name == "compiled":
            raise
        return _scan_py
    return _scan_ext


def available() -> list:
    names = ["python"]
    try:
        from . import _scan_ext  # noqa: F401
    except ImportError:
        return names
    return ["compiled"] + names


kernels = load(os.environ.get("REGENID_BACKEND", "auto"))
BACKEND = kernels.NAME
