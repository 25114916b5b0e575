"""
Prepared dataset files.

``<name>.csv`` holds one row per point (``window_id,pos,load_norm,temp_norm,mask``),
margin context included at positions -margin..-1 and N..N+margin-1.
``<name>.json`` is the sidecar with the normalization constants and the
parameters the windows were produced with, including each window's segments.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core_numerics.errors import DataError
from load_data.fleet import AlignedProfile
from load_data.windows import MaskedWindow, ProfileWindow

logger = logging.getLogger(__name__)

DATASET_COLUMNS = ["window_id", "pos", "load_norm", "temp_norm", "mask"]
FORMAT_VERSION = 1


@dataclass
class PreparedDataset:
    windows: List[MaskedWindow]
    profiles: List[Dict[str, object]]
    window_len: int
    margin: int
    meta: Dict[str, object] = field(default_factory=dict)
    _by_start: Optional[Dict[Tuple[int, int], ProfileWindow]] = field(default=None, init=False, repr=False)

    def profile_of(self, window: Union[MaskedWindow, ProfileWindow]) -> Dict[str, object]:
        pid = window.window.profile_id if isinstance(window, MaskedWindow) else window.profile_id
        for profile in self.profiles:
            if profile["profile_id"] == pid:
                return profile
        raise DataError(f"window refers to unknown profile {pid}")

    def p_max_of(self, window: Union[MaskedWindow, ProfileWindow]) -> float:
        return float(self.profile_of(window)["p_max"])

    def adjacent_loads(self, window: MaskedWindow) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        """
        Normalized load right before and right after ``window`` on its profile,
        taken from the neighbouring windows; None where there is no neighbour.
        The neighbours are read unmasked.
        """
        w = window.window
        if self._by_start is None:
            self._by_start = {
                (mw.window.profile_id, mw.window.start_index): mw.window for mw in self.windows
            }
        by_start = self._by_start
        prev = by_start.get((w.profile_id, w.start_index - self.window_len))
        nxt = by_start.get((w.profile_id, w.start_index + self.window_len))
        before = prev.extended_load()[: prev.left_margin + prev.window_len] if prev is not None else None
        after = nxt.extended_load()[nxt.left_margin:] if nxt is not None else None
        return before, after


def sidecar_path(csv_path: Union[str, Path]) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_dataset(
    path: Union[str, Path],
    windows: List[MaskedWindow],
    profiles: List[AlignedProfile],
    margin: int,
    meta: Optional[Dict[str, object]] = None,
) -> Path:
    """Write the dataset CSV and its JSON sidecar; returns the CSV path."""
    if not windows:
        raise DataError("refusing to write an empty dataset")
    window_len = windows[0].window_len
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    frames = []
    for mw in windows:
        w = mw.window
        if w.window_len != window_len or w.left_margin != margin or w.right_margin != margin:
            raise DataError(f"window {w.window_id}: inconsistent length or margins")
        pos = np.arange(-margin, window_len + margin)
        mask = np.concatenate([np.ones(margin, np.int8), mw.mask, np.ones(margin, np.int8)])
        frames.append(
            pd.DataFrame(
                {
                    "window_id": np.full(pos.shape, w.window_id),
                    "pos": pos,
                    "load_norm": w.extended_load(),
                    "temp_norm": w.extended_temp(),
                    "mask": mask,
                }
            )
        )
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")

    constants = [p.constants() for p in profiles]
    sidecar = {
        "format_version": FORMAT_VERSION,
        # profile 0 constants at top level; per-profile values under "profiles"
        "p_max": constants[0]["p_max"],
        "t_min": constants[0]["t_min"],
        "t_max": constants[0]["t_max"],
        "profiles": constants,
        "window_profile": {str(mw.window_id): mw.window.profile_id for mw in windows},
        "window_start": {str(mw.window_id): mw.window.start_index for mw in windows},
        "window_segments": {str(mw.window_id): [list(iv) for iv in mw.intervals] for mw in windows},
        "window_len": window_len,
        "margin": margin,
    }
    sidecar.update(meta or {})
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %d windows (%d points each) to %s", len(windows), window_len, path)
    return path


def read_dataset(path: Union[str, Path]) -> PreparedDataset:
    """Load a dataset written by ``write_dataset``."""
    path = Path(path)
    side = sidecar_path(path)
    try:
        frame = pd.read_csv(path)
        sidecar = json.loads(side.read_text(encoding="utf-8"))
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    missing = set(DATASET_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    try:
        window_len = int(sidecar["window_len"])
        margin = int(sidecar["margin"])
        profiles = list(sidecar["profiles"])
        window_profile = {int(k): int(v) for k, v in sidecar["window_profile"].items()}
        window_start = {int(k): int(v) for k, v in sidecar.get("window_start", {}).items()}
        window_segments = {
            int(k): tuple((int(a), int(b)) for a, b in v) for k, v in sidecar.get("window_segments", {}).items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{side}: malformed sidecar ({exc})") from exc

    span = window_len + 2 * margin
    frame = frame.sort_values(["window_id", "pos"], kind="stable")
    counts = frame.groupby("window_id").size()
    if (counts != span).any():
        bad = counts[counts != span].index.tolist()
        raise DataError(f"{path}: windows {bad[:5]} do not have {span} rows")
    ids = counts.index.to_numpy()
    load = frame["load_norm"].to_numpy(np.float64).reshape(len(ids), span)
    temp = frame["temp_norm"].to_numpy(np.float64).reshape(len(ids), span)
    mask = frame["mask"].to_numpy(np.int8).reshape(len(ids), span)

    windows = []
    core = slice(margin, margin + window_len)
    for row, wid in enumerate(ids):
        wid = int(wid)
        window = ProfileWindow(
            window_id=wid,
            load=load[row, core],
            temp=temp[row, core],
            left_load=load[row, :margin],
            left_temp=temp[row, :margin],
            right_load=load[row, margin + window_len:],
            right_temp=temp[row, margin + window_len:],
            profile_id=window_profile.get(wid, 0),
            start_index=window_start.get(wid, 0),
        )
        windows.append(MaskedWindow(window=window, mask=mask[row, core], intervals=window_segments.get(wid, ())))
    logger.info("Read %d windows from %s", len(windows), path)
    return PreparedDataset(windows, profiles, window_len, margin, meta=sidecar)
