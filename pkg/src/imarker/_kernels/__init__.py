"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
pure-Python module ``_pykernels`` is used. Set ``IMARKER_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _pykernels as pykernels

ckernels = None
if not os.environ.get("IMARKER_PURE_PYTHON"):
    try:
        from . import _ckernels as ckernels  # type: ignore[no-redef]
    except ImportError:  # extension not built
        ckernels = None

_active = ckernels if ckernels is not None else pykernels
BACKEND = "cython" if ckernels is not None else "python"

min_filter = _active.min_filter
convolve_separable = _active.convolve_separable
rgb_to_gray = _active.rgb_to_gray
rgb_to_hsv = _active.rgb_to_hsv
hsv_mask = _active.hsv_mask
fast_scores = _active.fast_scores
warp_bilinear = _active.warp_bilinear
trace_components = _active.trace_components

__all__ = [
    "BACKEND",
    "ckernels",
    "pykernels",
    "min_filter",
    "convolve_separable",
    "rgb_to_gray",
    "rgb_to_hsv",
    "hsv_mask",
    "fast_scores",
    "warp_bilinear",
    "trace_components",
]
