"""Log-polar foveated sampling with saccadic attention, in pure numpy.

Submodules are imported lazily so the command-line front end can pin BLAS
thread counts via environment variables before numpy first loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "geometry",
    "sampler",
    "nnops",
    "model",
    "data",
    "ppm",
    "gradcheck",
    "training",
    "cli",
)


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
