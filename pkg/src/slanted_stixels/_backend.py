"""Kernel backend selection.

The compiled extension is used when importable; ``STIXEL_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _pykernels

python = _pykernels
compiled = None
try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    pass

if compiled is not None and os.environ.get("STIXEL_BACKEND", "").lower() != "python":
    kernels = compiled
    NAME = "cython"
else:
    kernels = python
    NAME = "python"


def get(name: str | None = None):
    """Kernel module by name ('cython' or 'python'); None gives the default."""
    if name is None:
        return kernels
    if name == "python":
        return python
    if name == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    return ["python"] + (["cython"] if compiled is not None else [])


def name_of(module) -> str:
    return "python" if module is python else "cython"
