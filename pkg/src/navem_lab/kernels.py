"""Hot-kernel dispatch: compiled Cython core with a pure-numpy fallback.

The compiled module ``navem_lab._kernels`` is used when it imports cleanly
and ``NAVEM_LAB_PURE`` is not set to a truthy value.  ``BACKEND`` names the
active implementation.
"""

import os

from navem_lab import _kernels_py

_force_pure = os.environ.get("NAVEM_LAB_PURE", "").strip().lower() in {"1", "true", "yes"}

try:
    if _force_pure:
        raise ImportError("pure backend forced by NAVEM_LAB_PURE")
    from navem_lab import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


def polygon_jets(vertices, pts, order, eps):
    return _impl.polygon_jets(vertices, pts, order, eps)


def available_backends():
    out = {"python": _kernels_py}
    try:
        from navem_lab import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
