"""Hot numeric kernels with a compiled core and a NumPy fallback.

The backend is picked once at import time: the Cython extension when it is
available, otherwise the NumPy reference implementation.  Set
``MVDET_BACKEND=python`` (or ``compiled``) to force a choice; forcing
``compiled`` raises if the extension was not built.  Both backends produce
bit-identical results (see benchmarks/bench_backends.py for a speed
comparison).
"""

import os

from . import _ref

_requested = os.environ.get("MVDET_BACKEND", "").strip().lower()

if _requested in ("python", "numpy", "ref"):
    _impl = _ref
    BACKEND = "python"
elif _requested in ("", "compiled", "c", "cython"):
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        if _requested:
            raise ImportError(
                "MVDET_BACKEND=compiled but mvdet._kernels._core is not "
                "built; reinstall with a C toolchain or unset MVDET_BACKEND"
            )
        _impl = _ref
        BACKEND = "python"
else:
    raise ValueError(f"unknown MVDET_BACKEND value: {_requested!r}")

project_points = _impl.project_points
box_points = _impl.box_points
bilinear_sample = _impl.bilinear_sample
iou_matrix = _impl.iou_matrix

__all__ = [
    "BACKEND",
    "bilinear_sample",
    "box_points",
    "iou_matrix",
    "project_points",
]
