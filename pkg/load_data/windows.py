"""
Windows, Masks and Tokens
Cuts aligned profiles into day-aligned windows, places missing data segments
and maps normalized values onto the integer classes the encoder consumes.

Key Characteristics:
1. Windows tile the profile at midnight boundaries and keep margin context
2. Masks: central, per-day peak, multi-day peak, or explicit intervals
3. Class 0 is both the lowest bin and the mask token
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core_numerics.errors import ConfigError, DataError
from load_data.fleet import POINTS_PER_DAY, STEP_MINUTES, AlignedProfile

logger = logging.getLogger(__name__)

NUM_CLASSES = 200
MDS_POINTS = 16
MASK_STRATEGIES = ("central", "peak", "multi_peak", "explicit")


@dataclass
class ProfileWindow:
    """A window of normalized load/temperature plus context on either side."""

    window_id: int
    load: np.ndarray
    temp: np.ndarray
    left_load: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left_temp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    right_load: np.ndarray = field(default_factory=lambda: np.zeros(0))
    right_temp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    profile_id: int = 0
    start_index: int = 0

    def __post_init__(self):
        if self.load.shape != self.temp.shape or self.load.ndim != 1:
            raise DataError(f"window {self.window_id}: load/temp shapes differ")
        if self.left_load.shape != self.left_temp.shape or self.right_load.shape != self.right_temp.shape:
            raise DataError(f"window {self.window_id}: margin shapes differ")

    @property
    def window_len(self) -> int:
        return self.load.shape[0]

    @property
    def left_margin(self) -> int:
        return self.left_load.shape[0]

    @property
    def right_margin(self) -> int:
        return self.right_load.shape[0]

    def extended_load(self) -> np.ndarray:
        return np.concatenate([self.left_load, self.load, self.right_load])

    def extended_temp(self) -> np.ndarray:
        return np.concatenate([self.left_temp, self.temp, self.right_temp])

    def recut(self, offset: int) -> "ProfileWindow":
        """Slide the window by ``offset`` points inside its own margins."""
        if offset == 0:
            return self
        if not -self.left_margin <= offset <= self.right_margin:
            raise DataError(
                f"window {self.window_id}: offset {offset} exceeds margins "
                f"({self.left_margin}, {self.right_margin})"
            )
        start = self.left_margin + offset
        end = start + self.window_len
        ext_load, ext_temp = self.extended_load(), self.extended_temp()
        return replace(
            self,
            load=ext_load[start:end],
            temp=ext_temp[start:end],
            left_load=ext_load[:start],
            left_temp=ext_temp[:start],
            right_load=ext_load[end:],
            right_temp=ext_temp[end:],
            start_index=self.start_index + offset,
        )


@dataclass
class MaskSpec:
    """Where the missing data segments go."""

    strategy: str = "central"
    segment_len: int = MDS_POINTS
    count: int = 1
    max_count: Optional[int] = None
    intervals: Tuple[Tuple[int, int], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in MASK_STRATEGIES:
            raise ConfigError(f"unknown mask strategy {self.strategy!r}; choose from {MASK_STRATEGIES}")
        if self.segment_len < 1:
            raise ConfigError(f"segment_len must be >= 1, got {self.segment_len}")
        if self.count < 1:
            raise ConfigError(f"mask count must be >= 1, got {self.count}")
        if self.max_count is not None and self.max_count < self.count:
            raise ConfigError(f"max_count {self.max_count} is below count {self.count}")
        if self.strategy == "explicit" and not self.intervals:
            raise ConfigError("explicit masking needs at least one interval")
        self.intervals = tuple((int(a), int(b)) for a, b in self.intervals)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "segment_len": self.segment_len,
            "count": self.count,
            "max_count": self.max_count,
            "intervals": [list(iv) for iv in self.intervals],
            "seed": self.seed,
        }


@dataclass
class MaskedWindow:
    """
    A window with its mask vector M (0 = missing); masked_load = load ⊙ M.

    ``intervals`` are the half-open missing data segments as placed. Two
    segments may touch (one day ending at midnight, the next starting there)
    and still count as two; without intervals the runs of zeros are used.
    """

    window: ProfileWindow
    mask: np.ndarray
    intervals: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        wid = self.window.window_id
        self.mask = np.asarray(self.mask, dtype=np.int8)
        if self.mask.shape != (self.window.window_len,):
            raise DataError(
                f"window {wid}: mask {self.mask.shape} does not match length {self.window.window_len}"
            )
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise DataError(f"window {wid}: mask must be binary")
        if not self.intervals:
            self.intervals = tuple((s, e + 1) for s, e in mask_segments(self.mask))
            return
        self.intervals = tuple(sorted((int(a), int(b)) for a, b in self.intervals))
        covered = np.ones_like(self.mask)
        prev_end = 0
        for a, b in self.intervals:
            if not prev_end <= a < b <= self.window.window_len:
                raise DataError(f"window {wid}: segment [{a}, {b}) is out of range or overlaps")
            covered[a:b] = 0
            prev_end = b
        if not np.array_equal(covered, self.mask):
            raise DataError(f"window {wid}: segments do not match the mask")

    @property
    def window_id(self) -> int:
        return self.window.window_id

    @property
    def window_len(self) -> int:
        return self.window.window_len

    @property
    def load(self) -> np.ndarray:
        return self.window.load

    @property
    def temp(self) -> np.ndarray:
        return self.window.temp

    @property
    def masked_load(self) -> np.ndarray:
        return self.window.load * self.mask

    @property
    def left_margin(self) -> int:
        return self.window.left_margin

    @property
    def right_margin(self) -> int:
        return self.window.right_margin

    @property
    def missing_count(self) -> int:
        return int((1 - self.mask).sum())

    def segments(self) -> List[Tuple[int, int]]:
        """Missing data segments as inclusive (start, end) pairs."""
        return [(a, b - 1) for a, b in self.intervals]


@dataclass
class TokenSequence:
    """Quantized load and temperature classes for one window."""

    load_classes: np.ndarray
    temp_classes: np.ndarray
    classes: int = NUM_CLASSES

    def __post_init__(self):
        for name in ("load_classes", "temp_classes"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= self.classes):
                raise DataError(f"{name} outside [0, {self.classes})")
        if self.load_classes.shape != self.temp_classes.shape:
            raise DataError("load and temperature token sequences differ in length")


def mask_segments(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Contiguous runs of zeros as inclusive (start, end) pairs."""
    missing = np.concatenate([[0], (np.asarray(mask) == 0).astype(np.int8), [0]])
    edges = np.diff(missing)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


# -----------------------------------------------------------------------------
# Windowing
# -----------------------------------------------------------------------------


def window_profiles(
    profile: AlignedProfile, window_len: int = 96, margin: int = 0, first_id: int = 0
) -> List[ProfileWindow]:
    """
    Tile the profile into consecutive midnight-aligned windows.

    Windows without ``margin`` points of context on both sides, or touching a
    missing reading, are dropped.
    """
    if window_len < 1 or window_len % POINTS_PER_DAY:
        raise DataError(f"window_len must be a positive multiple of {POINTS_PER_DAY}, got {window_len}")
    if margin < 0:
        raise DataError(f"margin must be >= 0, got {margin}")
    n = len(profile)
    if n < window_len + 2 * margin:
        raise DataError(
            f"profile of {n} points is shorter than one window ({window_len}) plus margins ({margin})"
        )

    start = profile.start_timestamp
    points_since_midnight = (start.hour * 60 + start.minute) // STEP_MINUTES
    offset = (POINTS_PER_DAY - points_since_midnight) % POINTS_PER_DAY

    windows: List[ProfileWindow] = []
    dropped_gaps = 0
    for s in range(offset, n - window_len + 1, window_len):
        e = s + window_len
        if s - margin < 0 or e + margin > n:
            continue
        if np.isnan(profile.load_norm[s - margin:e + margin]).any():
            dropped_gaps += 1
            continue
        windows.append(
            ProfileWindow(
                window_id=first_id + len(windows),
                load=profile.load_norm[s:e].copy(),
                temp=profile.temp_norm[s:e].copy(),
                left_load=profile.load_norm[s - margin:s].copy(),
                left_temp=profile.temp_norm[s - margin:s].copy(),
                right_load=profile.load_norm[e:e + margin].copy(),
                right_temp=profile.temp_norm[e:e + margin].copy(),
                profile_id=profile.profile_id,
                start_index=s,
            )
        )
    if dropped_gaps:
        logger.warning("Dropped %d windows touching missing readings", dropped_gaps)
    return windows


# -----------------------------------------------------------------------------
# Masking
# -----------------------------------------------------------------------------


def peak_interval(load: np.ndarray, segment_len: int) -> int:
    """Start of the contiguous interval with the largest load sum (earliest on ties)."""
    sums = sliding_window_view(load, segment_len).sum(axis=1)
    return int(np.argmax(sums))


def _day_length(window_len: int) -> int:
    if window_len < POINTS_PER_DAY:
        return window_len
    if window_len % POINTS_PER_DAY:
        raise DataError(f"peak masks need whole days, window has {window_len} points")
    return POINTS_PER_DAY


def _segments_for(
    window: ProfileWindow, spec: MaskSpec, rng: np.random.Generator
) -> List[Tuple[int, int]]:
    n = window.window_len
    seg = spec.segment_len
    if spec.strategy == "explicit":
        intervals = sorted(spec.intervals)
        for a, b in intervals:
            if not 0 <= a < b <= n:
                raise DataError(f"explicit interval [{a}, {b}) lies outside the window of {n}")
        for (_, b0), (a1, _) in zip(intervals, intervals[1:]):
            if a1 < b0:
                raise DataError("explicit intervals overlap")
        return intervals

    if seg > n:
        raise DataError(f"segment of {seg} points does not fit a window of {n}")

    if spec.strategy == "central":
        if spec.count != 1 or spec.max_count not in (None, 1):
            raise DataError("central masking places exactly one segment")
        a = (n - seg) // 2
        return [(a, a + seg)]

    day = _day_length(n)
    if seg > day:
        raise DataError(f"segment of {seg} points does not fit a day of {day}")
    n_days = n // day
    starts = [d * day + peak_interval(window.load[d * day:(d + 1) * day], seg) for d in range(n_days)]

    if spec.strategy == "peak":
        if spec.count != 1 or spec.max_count not in (None, 1):
            raise DataError("peak masking places exactly one segment; use multi_peak for more")
        day_sums = [window.load[s:s + seg].sum() for s in starts]
        best = starts[int(np.argmax(day_sums))]
        return [(best, best + seg)]

    if spec.count > n_days:
        raise DataError(f"multi_peak needs {spec.count} days but the window holds {n_days}")
    # without max_count the count ranges up to one segment per day
    upper = min(spec.max_count, n_days) if spec.max_count is not None else n_days
    count = int(rng.integers(spec.count, upper + 1))
    days = np.sort(rng.choice(n_days, size=count, replace=False))
    return [(starts[d], starts[d] + seg) for d in days]


def apply_mask(
    window: Union[ProfileWindow, MaskedWindow],
    spec: MaskSpec,
    rng: Optional[np.random.Generator] = None,
) -> MaskedWindow:
    """Place the missing data segments described by ``spec`` on ``window``."""
    if isinstance(window, MaskedWindow):
        window = window.window
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    intervals = _segments_for(window, spec, rng)
    mask = np.ones(window.window_len, dtype=np.int8)
    for a, b in intervals:
        mask[a:b] = 0
    return MaskedWindow(window=window, mask=mask, intervals=tuple(intervals))


# -----------------------------------------------------------------------------
# Quantization
# -----------------------------------------------------------------------------


def quantize(values: np.ndarray, classes: int = NUM_CLASSES) -> np.ndarray:
    """class = min(floor(v·C), C−1) for v in [0, 1]."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
        raise DataError("quantize: values must lie in [0, 1]")
    return np.minimum(np.floor(arr * classes).astype(np.int64), classes - 1)


def dequantize(
    class_ids: np.ndarray, classes: int = NUM_CLASSES, p_max: Optional[float] = None
) -> np.ndarray:
    """Bin midpoints (c + 0.5)/C, optionally scaled back to kW."""
    arr = np.asarray(class_ids)
    if arr.size and (arr.min() < 0 or arr.max() >= classes):
        raise DataError(f"dequantize: classes must lie in [0, {classes})")
    values = (arr.astype(np.float64) + 0.5) / classes
    return values * p_max if p_max is not None else values


def tokenize(window: MaskedWindow, classes: int = NUM_CLASSES) -> TokenSequence:
    """Quantize the masked load and the temperature of one window."""
    load_classes = quantize(window.masked_load, classes)
    if np.any((load_classes == 0) & (window.mask == 1)):
        raise DataError(
            f"window {window.window_id}: an observed load falls in class 0, "
            "which is reserved for masked positions"
        )
    return TokenSequence(load_classes, quantize(window.temp, classes), classes)


def split_dataset(
    windows: Sequence, ratio: float = 0.8, seed: int = 0
) -> Tuple[list, list]:
    """Seeded shuffle, then the first ``ratio`` share goes to training."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"split ratio must lie in [0, 1], got {ratio}")
    if len(windows) < 2:
        raise DataError(f"need at least 2 windows to split, got {len(windows)}")
    order = np.random.default_rng(seed).permutation(len(windows))
    n_train = int(round(ratio * len(windows)))
    train = [windows[i] for i in order[:n_train]]
    test = [windows[i] for i in order[n_train:]]
    if not test:
        logger.warning("Split ratio %.2f leaves the test set empty", ratio)
    return train, test
