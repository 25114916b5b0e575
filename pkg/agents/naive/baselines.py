"""
Naive restoration baselines.
Fill the missing data segments from the neighbouring known readings; no model.
"""

from typing import Optional

import numpy as np

from core_numerics.errors import DataError
from load_data.fleet import POINTS_PER_DAY
from load_data.windows import MaskedWindow


def _extended(window: MaskedWindow):
    left = window.left_margin
    mask = np.concatenate([np.ones(left, np.int8), window.mask, np.ones(window.right_margin, np.int8)])
    return window.window.extended_load(), mask, left


def linear_interp(window: MaskedWindow) -> np.ndarray:
    """Straight line between the known points on either side of each segment."""
    load, mask, left = _extended(window)
    known = np.flatnonzero(mask == 1)
    if known.size == 0:
        raise DataError(f"window {window.window_id}: no known points to interpolate from")
    filled = np.interp(np.arange(load.size), known, load[known])
    restored = np.where(mask == 1, load, filled)
    return restored[left:left + window.window_len]


def copy_prev_day(
    window: MaskedWindow,
    before: Optional[np.ndarray] = None,
    after: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Same time of day one day earlier, else one day later, else linear interpolation.

    ``before`` and ``after`` are the normalized loads recorded right before and
    right after the window on the same profile. When given they replace the
    margins, so a daily window can reach the previous day.
    """
    load, mask, left = _extended(window)
    if before is not None or after is not None:
        before = np.asarray(before if before is not None else load[:left], dtype=np.float64)
        after = np.asarray(
            after if after is not None else load[left + window.window_len:], dtype=np.float64
        )
        load = np.concatenate([before, window.load, after])
        mask = np.concatenate([np.ones(before.size, np.int8), window.mask, np.ones(after.size, np.int8)])
        left = before.size
    fallback = linear_interp(window)
    restored = window.load.copy()
    for t in np.flatnonzero(window.mask == 0):
        pos = left + t
        if pos - POINTS_PER_DAY >= 0 and mask[pos - POINTS_PER_DAY] == 1:
            restored[t] = load[pos - POINTS_PER_DAY]
        elif pos + POINTS_PER_DAY < load.size and mask[pos + POINTS_PER_DAY] == 1:
            restored[t] = load[pos + POINTS_PER_DAY]
        else:
            restored[t] = fallback[t]
    return restored
