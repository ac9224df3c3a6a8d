"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``MERGE_MADDPG_BACKEND=python`` (or ``cython``) to force one.
"""

import importlib
import os

_MODULES = {"cython": "merge_maddpg._kernels", "python": "merge_maddpg._kernels_py"}


def load(name):
    """Import and return the kernel module called ``name``."""
    try:
        return importlib.import_module(_MODULES[name])
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; expected one of {sorted(_MODULES)}") from None


def available():
    names = []
    for name in _MODULES:
        try:
            load(name)
        except ImportError:
            continue
        names.append(name)
    return names


def _select():
    forced = os.environ.get("MERGE_MADDPG_BACKEND", "").strip().lower()
    if forced:
        return load(forced)
    try:
        return load("cython")
    except ImportError:
        return load("python")


kernels = _select()


def set_backend(name):
    """Swap the active kernels process-wide; returns the previous name."""
    global kernels
    previous = kernels.NAME
    kernels = load(name)
    return previous


def name():
    return kernels.NAME
