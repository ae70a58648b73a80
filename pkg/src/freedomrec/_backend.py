"""Select the compiled kernels when importable, else the numpy fallback.

Set ``FREEDOMREC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from freedomrec import _pykernels

if os.environ.get("FREEDOMREC_PURE_PYTHON") == "1":
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from freedomrec import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"


def available_backends():
    """Map of backend name -> kernel module for every backend that imports."""
    found = {"python": _pykernels}
    try:
        from freedomrec import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
