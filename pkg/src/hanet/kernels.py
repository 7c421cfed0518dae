"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_kernels_py``. Setting ``HANET_PURE_PYTHON=1`` forces
the numpy path.
"""
import os

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("HANET_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_KERNELS = ("bool_spgemm", "segment_softmax", "segment_softmax_backward", "spmm", "spmm_backward")


def _bind(name):
    impl = _BACKENDS[name]
    globals().update({k: getattr(impl, k) for k in _KERNELS})


_bind(BACKEND)


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    """Return the kernel module registered under ``name`` ('python' or 'cython')."""
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; "
                         f"have {available_backends()}") from None


def set_backend(name):
    """Route every kernel call to backend ``name``; returns the previous name.

    Not thread-safe; meant for benchmarks and tests.
    """
    global BACKEND
    get_backend(name)
    previous, BACKEND = BACKEND, name
    _bind(name)
    return previous
