"""Kernel backend selection.

The compiled Cython module is preferred; the numpy fallback is used when it
is not built or when ``IMITREG_KERNELS=python`` is set in the environment.
``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

_forced = os.environ.get("IMITREG_KERNELS", "").lower()

_impl = _pykernels
BACKEND = "python"
if _forced != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _pykernels

bilinear_sample = _impl.bilinear_sample
correlate1d_reflect = _impl.correlate1d_reflect
box_sum = _impl.box_sum
frangi_response = _impl.frangi_response


def available_backends():
    """Map backend name -> kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
