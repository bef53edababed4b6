"""Kernel backend selection.

At import the compiled ``_ckernels`` extension is used when it was built;
otherwise the numpy fallback in ``_pykernels`` takes over. Setting
``VIGIL_BACKEND=python`` forces the fallback. :func:`use` switches at runtime,
which the backend benchmark and the cross-backend tests rely on.
"""

import contextlib
import importlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _BACKENDS["compiled"] = _ckernels


def available():
    return sorted(_BACKENDS)


def _initial():
    wanted = os.environ.get("VIGIL_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in _BACKENDS:
            log.warning("VIGIL_BACKEND=%s unavailable, using %s", wanted,
                        "compiled" if _ckernels else "python")
        else:
            return _BACKENDS[wanted]
    return _ckernels if _ckernels is not None else _pykernels


kernels = _initial()


def name():
    return kernels.NAME


def set_backend(backend_name):
    global kernels
    if backend_name not in _BACKENDS:
        raise ValueError(f"unknown backend {backend_name!r}; available: {available()}")
    kernels = _BACKENDS[backend_name]


@contextlib.contextmanager
def use(backend_name):
    previous = kernels.NAME
    set_backend(backend_name)
    try:
        yield importlib.import_module(__name__).kernels
    finally:
        set_backend(previous)
