"""Integer convolution kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is.  ``DSA_FORGE_KERNELS=python`` forces the fallback and
``DSA_FORGE_KERNELS=cython`` makes a missing extension an import error.
"""

import os

from . import _pykernels

_choice = os.environ.get("DSA_FORGE_KERNELS", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"DSA_FORGE_KERNELS must be auto, python or cython, not {_choice!r}")

_impl = _pykernels
BACKEND = "python"
if _choice != "python":
    try:
        from . import _ckernels
    except ImportError:
        if _choice == "cython":
            raise
    else:
        _impl = _ckernels
        BACKEND = "cython"

conv3x3_accumulate = _impl.conv3x3_accumulate
ring_step = _impl.ring_step
conv3x3_direct = _impl.conv3x3_direct


def available_backends():
    names = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        names["cython"] = _ckernels
    return names
