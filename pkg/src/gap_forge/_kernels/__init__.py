"""Hot kernels, compiled when available.

The Cython module ``_core`` is used if it imports; otherwise the numpy
fallback is used.  Set ``GAP_FORGE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("GAP_FORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback

MI = _fallback.MI
MAP = _fallback.MAP
MAP_SMOOTH = _fallback.MAP_SMOOTH

project_simplex_rows = _impl.project_simplex_rows
project_feasible = _impl.project_feasible
mi_value_grad = _impl.mi_value_grad
map_value_grad = _impl.map_value_grad
pgd_solve = _impl.pgd_solve
grid_search = _impl.grid_search
simplex_grid = _fallback.simplex_grid


def implementations():
    """Name -> module for every importable backend (used by tests and benchmarks)."""
    out = {"python": _fallback}
    try:
        from . import _core

        out["cython"] = _core
    except ImportError:  # pragma: no cover
        pass
    return out
