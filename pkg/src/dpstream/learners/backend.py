"""Selects the compiled gradient kernel when it was built, numpy otherwise."""
import logging

from . import _reference

log = logging.getLogger(__name__)

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

_BACKENDS = {"python": _reference.clipped_grad_sum}
if _kernels is not None:
    _BACKENDS["native"] = _kernels.clipped_grad_sum

_active = "native" if _kernels is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Switch the kernel used by training; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; choose from {available_backends()}")
    previous, _active = _active, name
    log.debug("gradient backend: %s", name)
    return previous


def clipped_grad_sum(params, sizes, X, y, kind, clip_norm, first_trainable=0):
    return _BACKENDS[_active](params, sizes, X, y, kind, clip_norm, first_trainable)
