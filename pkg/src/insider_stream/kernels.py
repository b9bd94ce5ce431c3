"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``INSIDER_STREAM_PURE=1`` to force the fallback.
"""

import os

from insider_stream import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("INSIDER_STREAM_PURE", "") not in ("1", "true", "yes"):
    try:
        from insider_stream import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

jacobi_eigh = _impl.jacobi_eigh
build_itree = _impl.build_itree
itree_path_lengths = _impl.itree_path_lengths


def available_backends():
    out = {"python": _kernels_py}
    try:
        from insider_stream import _kernels as _compiled
    except ImportError:
        return out
    out["cython"] = _compiled
    return out
