"""Kernel backend selection.

The compiled extension is used when it imports; setting
``LESIONKIT_PURE_PYTHON=1`` forces the pure-Python twin.  The worker thread
count for parallel kernels comes from ``LESIONKIT_NUM_THREADS`` (default: CPU
count).  Results never depend on it.
"""

from __future__ import annotations

import os

from . import _pure

try:
    if os.environ.get("LESIONKIT_PURE_PYTHON", "").strip() not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _ext as kernels
    BACKEND = "cython"
except ImportError:
    kernels = _pure
    BACKEND = "python"


def num_threads() -> int:
    raw = os.environ.get("LESIONKIT_NUM_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
