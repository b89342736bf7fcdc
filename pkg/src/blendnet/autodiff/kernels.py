"""Backend selection for the conv patch kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``BLENDNET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
im2col3x3 = _kernels_py.im2col3x3
col2im3x3 = _kernels_py.col2im3x3

if os.environ.get("BLENDNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        im2col3x3 = _compiled.im2col3x3
        col2im3x3 = _compiled.col2im3x3


def backends():
    """Return ``{name: (im2col, col2im)}`` for every importable backend."""
    found = {"python": (_kernels_py.im2col3x3, _kernels_py.col2im3x3)}
    try:
        from . import _kernels as compiled  # type: ignore[attr-defined]
    except ImportError:
        return found
    found["compiled"] = (compiled.im2col3x3, compiled.col2im3x3)
    return found
