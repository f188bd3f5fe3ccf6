"""Small shared helpers."""

from __future__ import annotations

import os


def kdtree_workers() -> int:
    """Worker count for KD-tree queries; BW_THREADS caps parallelism.

    Results are identical regardless of worker count, so this only affects
    latency.
    """
    raw = os.environ.get("BW_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            return 1
    return -1
