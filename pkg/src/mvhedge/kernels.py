"""Backend selection for the DP inner loops.

The compiled extension is used when it was built; ``MVHEDGE_BACKEND=python``
forces the NumPy fallback. Both expose the same functions.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MVHEDGE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def default_threads() -> int:
    """Worker count from ``MVHEDGE_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("MVHEDGE_THREADS", "1")))
    except ValueError:
        return 1


def get(name: str, backend: str | None = None):
    """Return kernel ``name`` from the active backend, or from ``backend`` if given."""
    if backend is None:
        return getattr(_impl, name)
    if backend == "python":
        return getattr(_kernels_py, name)
    if backend == "cython":
        from . import _kernels as compiled

        return getattr(compiled, name)
    raise ValueError(f"unknown backend {backend!r}")


cell_sums = _impl.cell_sums
predict_grid = _impl.predict_grid
window_argmin = _impl.window_argmin
rowwise_window_argmin = _impl.rowwise_window_argmin
gather_shift = _impl.gather_shift
