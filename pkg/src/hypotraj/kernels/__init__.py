"""Geometric hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built at install time; set
``HYPOTRAJ_KERNELS=python`` to force the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HYPOTRAJ_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"

nearest_cell = _impl.nearest_cell
polar_bins = _impl.polar_bins
polar_pool_coo = _impl.polar_pool_coo
rotate_nearest = _impl.rotate_nearest
points_in_polygon = _impl.points_in_polygon


def backends():
    """Return the available kernel modules keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out


__all__ = [
    "BACKEND",
    "backends",
    "nearest_cell",
    "points_in_polygon",
    "polar_bins",
    "polar_pool_coo",
    "rotate_nearest",
]
