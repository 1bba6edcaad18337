"""Hot inner loops, compiled when available.

The Cython core (``_core``) is used when it was built; otherwise the
pure-Python mirror in ``_fallback`` is used. Set ``DLMORDER_PURE_PYTHON=1``
to force the fallback. Both backends return bit-identical results.
"""
import os

from . import _fallback

BACKEND = "python"

if not os.environ.get("DLMORDER_PURE_PYTHON"):
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

surrogate_sum = _impl.surrogate_sum
min_surrogate_sum = _impl.min_surrogate_sum
top_eigen_gram = _impl.top_eigen_gram


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _fallback}
    try:
        from . import _core

        found["compiled"] = _core
    except ImportError:
        pass
    return found


__all__ = ["BACKEND", "backends", "surrogate_sum", "min_surrogate_sum", "top_eigen_gram"]
