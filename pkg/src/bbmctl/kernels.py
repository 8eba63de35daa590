"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``BBMCTL_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("BBMCTL_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback

DAMP_NONE = _fallback.DAMP_NONE
DAMP_FEEDBACK = _fallback.DAMP_FEEDBACK
DAMP_LOCALIZED = _fallback.DAMP_LOCALIZED

convolve = _impl.convolve
quadratic_rhs = _impl.quadratic_rhs
lawson_rk4 = _impl.lawson_rk4


def backends():
    """Available implementations by name, fallback always included."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return out
