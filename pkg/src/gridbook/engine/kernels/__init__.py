"""Hot evaluation kernels: sorting, grouping, window scans.

A compiled extension (``gridbook.engine.kernels._fast``) is used when it
built successfully; the pure-Python module is the reference implementation
and the fallback.  Set ``GRIDBOOK_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import pure

if os.environ.get("GRIDBOOK_PURE"):
    _impl = pure
    COMPILED = False
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = pure
        COMPILED = False

def _fast_or_none():
    """The compiled module when built, else None (for benchmarks)."""
    try:
        from . import _fast
    except ImportError:
        return None
    return _fast


sort_indices = _impl.sort_indices
group_rows = _impl.group_rows
fill_down = _impl.fill_down
running_sum = _impl.running_sum
moving_average = _impl.moving_average

__all__ = [
    "COMPILED",
    "sort_indices",
    "group_rows",
    "fill_down",
    "running_sum",
    "moving_average",
]
