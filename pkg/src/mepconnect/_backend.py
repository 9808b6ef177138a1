"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels``. Set ``MEPCONNECT_BACKEND`` to ``python``
or ``cython`` to force one (``cython`` raises if the extension is missing).
"""
import importlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_BACKENDS = {"python": _pykernels}


def _load_cython():
    if "cython" not in _BACKENDS:
        _BACKENDS["cython"] = importlib.import_module("mepconnect._ckernels")
    return _BACKENDS["cython"]


def _select(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        return _load_cython()
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}; expected auto, cython or python")
    try:
        return _load_cython()
    except ImportError:
        log.info("compiled kernels unavailable, using numpy fallback")
        return _pykernels


kernels = _select(os.environ.get("MEPCONNECT_BACKEND", "auto").lower())


def available():
    """Names of the backends that can be activated in this build."""
    names = ["python"]
    try:
        _load_cython()
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def set_backend(name):
    """Switch the active kernels; returns the previous backend name."""
    global kernels
    previous = kernels.NAME
    kernels = _select(name)
    return previous


def backend_name():
    return kernels.NAME
