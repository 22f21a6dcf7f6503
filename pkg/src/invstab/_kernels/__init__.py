"""Kernel backend selection: compiled extension when available, NumPy otherwise.

Set INVSTAB_PURE_PYTHON=1 to force the fallback (used by the parity tests
and the benchmark).
"""

import os

if os.environ.get("INVSTAB_PURE_PYTHON"):
    from . import _metric_py as impl
else:
    try:
        from . import _metric_ext as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _metric_py as impl

BACKEND = impl.BACKEND

point_dist = impl.point_dist
rowwise_d1 = impl.rowwise_d1
rowwise_dinf = impl.rowwise_dinf
rowwise_dinf_argmax = impl.rowwise_dinf_argmax
pairwise_d1 = impl.pairwise_d1
bump_convolve = impl.bump_convolve


def get_backend(name):
    """Return a specific backend module ("cython" or "numpy"), for benchmarks."""
    if name == "numpy":
        from . import _metric_py
        return _metric_py
    if name == "cython":
        from . import _metric_ext
        return _metric_ext
    raise ValueError(f"unknown backend {name!r}")
