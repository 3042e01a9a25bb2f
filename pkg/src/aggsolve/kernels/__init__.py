"""Projection kernels with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise (or
when ``AGGSOLVE_PURE_PYTHON=1``) the functions come from ``_pykernels``.
``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

if os.environ.get("AGGSOLVE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

project_box = _impl.project_box
project_ball = _impl.project_ball
project_balanced = _impl.project_balanced
soft_threshold = _impl.soft_threshold
dykstra_polyhedron = _impl.dykstra_polyhedron
run_linear_segment = _impl.run_linear_segment


def available_backends():
    """Return the kernel modules that can be imported, keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


__all__ = [
    "BACKEND",
    "available_backends",
    "dykstra_polyhedron",
    "project_ball",
    "project_balanced",
    "project_box",
    "run_linear_segment",
    "soft_threshold",
]
