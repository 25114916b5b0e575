"""
Candidate Selection
Turns the distribution matrix into restorations: top-1, direct top-2 and the
iterative fork-point top-2.

Key Characteristics:
1. Outside the missing segments every method returns the top-1 classes
2. A fork point is the first position, scanning inward from a segment edge,
   where the top-1/top-2 probability gap drops below e
3. After a fork the remaining points of that side are refilled one at a time
   by shifting the window so the target sits at the segment edge
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from agents.bert_pin.encoder import DistributionMatrix, ModelConfig, ModelParams, decode_top1, predict_proba
from core_numerics.errors import ConfigError, DataError, ShapeError
from load_data.windows import MaskedWindow, mask_segments, quantize

logger = logging.getLogger(__name__)

METHODS = ("top1", "direct_top2", "iterative_top2")

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SelectionConfig:
    method: str = "iterative_top2"
    e: float = 0.5
    edge_padding: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"selection method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.e <= 1.0:
            raise ConfigError(f"fork threshold e must lie in [0, 1], got {self.e}")


@dataclass
class ForkRecord:
    segment_start: int
    segment_end: int
    fork_left: Optional[int] = None
    fork_right: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "segment_start": self.segment_start,
            "segment_end": self.segment_end,
            "fork_left": self.fork_left,
            "fork_right": self.fork_right,
        }


@dataclass
class CandidateSet:
    top1_classes: np.ndarray
    top2_classes: np.ndarray
    method: str
    forks: List[ForkRecord] = field(default_factory=list)
    e: Optional[float] = None

    @property
    def fork_left(self) -> Optional[int]:
        return self.forks[0].fork_left if self.forks else None

    @property
    def fork_right(self) -> Optional[int]:
        return self.forks[0].fork_right if self.forks else None


def _probs(dist: Union[DistributionMatrix, np.ndarray]) -> np.ndarray:
    return dist.probs if isinstance(dist, DistributionMatrix) else np.asarray(dist, dtype=np.float64)


def probability_gaps(dist: Union[DistributionMatrix, np.ndarray]) -> np.ndarray:
    """Per-position difference between the largest and second-largest probability."""
    probs = _probs(dist)
    if probs.shape[-1] < 2:
        raise ShapeError(f"need at least 2 classes, got {probs.shape}")
    ordered = np.sort(probs, axis=-1)
    return ordered[..., -1] - ordered[..., -2]


def direct_topk(dist: Union[DistributionMatrix, np.ndarray], mask: np.ndarray, rank: int = 2) -> CandidateSet:
    """The rank-th most probable class at masked positions, top-1 elsewhere."""
    probs = _probs(dist)
    if rank < 1 or probs.shape[-1] < max(rank, 2):
        raise ShapeError(f"cannot take rank {rank} from {probs.shape[-1]} classes")
    mask = np.asarray(mask)
    if mask.shape != probs.shape[:1]:
        raise ShapeError(f"mask {mask.shape} does not match {probs.shape[0]} positions")
    top1 = decode_top1(probs)
    ranked = np.argsort(-probs, axis=-1, kind="stable")[:, rank - 1]
    chosen = np.where(mask == 0, ranked, top1)
    return CandidateSet(top1, chosen, "direct_top2" if rank == 2 else f"direct_top{rank}")


def direct_top2(dist: Union[DistributionMatrix, np.ndarray], mask: np.ndarray) -> CandidateSet:
    return direct_topk(dist, mask, rank=2)


def find_fork_points(
    dist: Union[DistributionMatrix, np.ndarray], segment: Tuple[int, int], e: float
) -> Tuple[Optional[int], Optional[int]]:
    """First positions from each edge of [t_start, t_end] whose gap is below e."""
    ts, te = segment
    gaps = probability_gaps(dist)
    if not 0 <= ts <= te < gaps.shape[0]:
        raise ShapeError(f"segment {segment} outside {gaps.shape[0]} positions")
    half = (te - ts) // 2
    fork_left = next((t for t in range(ts, ts + half + 1) if gaps[t] < e), None)
    fork_right = next((t for t in range(te, te - half - 1, -1) if gaps[t] < e), None)
    return fork_left, fork_right


def model_predictor(params: ModelParams, config: ModelConfig) -> Predictor:
    def predict(load_cls: np.ndarray, temp_cls: np.ndarray) -> np.ndarray:
        return predict_proba(load_cls, temp_cls, params, config)

    return predict


def _second_class(probs_row: np.ndarray) -> int:
    return int(np.argsort(-probs_row, kind="stable")[1])


class _ShiftedContext:
    """Token arrays for the window plus its margins, indexed by window position."""

    def __init__(self, window: MaskedWindow, classes: int, need: int, edge_padding: bool):
        n = window.window_len
        left, right = window.left_margin, window.right_margin
        if min(left, right) < need:
            if not edge_padding:
                raise DataError(
                    f"window {window.window_id}: iterative top-2 needs {need} margin points "
                    f"per side, has ({left}, {right})"
                )
        pad_left, pad_right = max(need - left, 0), max(need - right, 0)
        ext_mask = np.concatenate([np.ones(left, np.int8), window.mask, np.ones(right, np.int8)])
        ext_load = window.window.extended_load() * ext_mask
        ext_temp = window.window.extended_temp()
        load_cls = quantize(ext_load, classes)
        temp_cls = quantize(ext_temp, classes)
        if pad_left or pad_right:
            logger.debug("Edge-padding window %d by (%d, %d)", window.window_id, pad_left, pad_right)
            load_cls = np.pad(load_cls, (pad_left, pad_right), mode="edge")
            temp_cls = np.pad(temp_cls, (pad_left, pad_right), mode="edge")
        self.n = n
        self.offset = left + pad_left
        self.load_cls = load_cls
        self.temp_cls = temp_cls

    def shifted(self, shift: int, fixed: dict, hole: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        """Window shifted by ``shift`` (positive = left) with ``hole`` masked and ``fixed`` filled."""
        load = self.load_cls.copy()
        ts, te = hole
        load[self.offset + ts:self.offset + te + 1] = 0
        for pos, cls in fixed.items():
            load[self.offset + pos] = cls
        start = self.offset + shift
        return load[start:start + self.n], self.temp_cls[start:start + self.n]


def iterative_top2(
    window: MaskedWindow,
    params: Optional[ModelParams],
    config: ModelConfig,
    sel: SelectionConfig,
    predictor: Optional[Predictor] = None,
) -> CandidateSet:
    """
    Fork-point top-2 restoration, applied to each missing segment independently.

    On each side the top-1 classes are kept up to the fork, the fork takes the
    second-best class and every later point up to the segment midpoint is
    re-predicted with the window shifted so that point sits at the segment edge.
    The left side owns the midpoint.
    """
    if predictor is None:
        if params is None:
            raise ConfigError("iterative_top2 needs params or a predictor")
        predictor = model_predictor(params, config)
    if window.window_len != config.window_len:
        raise ShapeError(f"window of {window.window_len} points, model expects {config.window_len}")

    segments = window.segments()
    need = max(((te - ts) // 2 for ts, te in segments), default=0)
    context = _ShiftedContext(window, config.classes, need, sel.edge_padding)
    base_load, base_temp = context.shifted(0, {}, (0, -1))
    probs = np.asarray(predictor(base_load, base_temp))
    top1 = decode_top1(probs)
    cand = top1.copy()
    forks: List[ForkRecord] = []

    for ts, te in segments:
        half = (te - ts) // 2
        fork_left, fork_right = find_fork_points(probs, (ts, te), sel.e)
        forks.append(ForkRecord(ts, te, fork_left, fork_right))
        mid = ts + half

        if fork_left is not None:
            cand[fork_left] = _second_class(probs[fork_left])
            fixed = {t: int(cand[t]) for t in range(ts, fork_left + 1)}
            for k in range(fork_left - ts + 1, half + 1):
                load_cls, temp_cls = context.shifted(k, fixed, (ts, te))
                shifted_probs = np.asarray(predictor(load_cls, temp_cls))
                cand[ts + k] = int(np.argmax(shifted_probs[ts]))
                fixed[ts + k] = int(cand[ts + k])

        if fork_right is not None and fork_right > mid:
            cand[fork_right] = _second_class(probs[fork_right])
            fixed = {t: int(cand[t]) for t in range(fork_right, te + 1)}
            for k in range(te - fork_right + 1, half + 1):
                target = te - k
                if target <= mid:
                    break
                load_cls, temp_cls = context.shifted(-k, fixed, (ts, te))
                shifted_probs = np.asarray(predictor(load_cls, temp_cls))
                cand[target] = int(np.argmax(shifted_probs[te]))
                fixed[target] = int(cand[target])

    return CandidateSet(top1, cand, "iterative_top2", forks, sel.e)


def select_candidates(
    window: MaskedWindow,
    params: Optional[ModelParams],
    config: ModelConfig,
    sel: SelectionConfig,
    predictor: Optional[Predictor] = None,
) -> CandidateSet:
    """Run the configured selection method on one window."""
    if sel.method == "iterative_top2":
        return iterative_top2(window, params, config, sel, predictor)
    predictor = predictor or model_predictor(params, config)
    load_cls = quantize(window.masked_load, config.classes)
    temp_cls = quantize(window.temp, config.classes)
    probs = np.asarray(predictor(load_cls, temp_cls))
    if sel.method == "direct_top2":
        result = direct_top2(probs, window.mask)
        result.forks = [ForkRecord(ts, te) for ts, te in window.segments()]
        return result
    top1 = decode_top1(probs)
    return CandidateSet(top1, top1.copy(), "top1", [ForkRecord(ts, te) for ts, te in window.segments()])


def combine_candidates(top1_vals: np.ndarray, top2_vals: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per position, the candidate closer to the truth; top-1 wins ties."""
    top1_vals, top2_vals, truth = (np.asarray(a, dtype=np.float64) for a in (top1_vals, top2_vals, truth))
    if not top1_vals.shape == top2_vals.shape == truth.shape:
        raise ShapeError(f"shapes differ: {top1_vals.shape}, {top2_vals.shape}, {truth.shape}")
    closer = np.abs(top2_vals - truth) < np.abs(top1_vals - truth)
    return np.where(closer, top2_vals, top1_vals)


def pocp(top1_vals: np.ndarray, top2_vals: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Percentage of masked positions where top-2 is strictly closer to the truth."""
    hole = np.asarray(mask) == 0
    k = int(hole.sum())
    if k == 0:
        raise DataError("pocp needs at least one masked position")
    top1_vals, top2_vals, truth = (np.asarray(a, dtype=np.float64) for a in (top1_vals, top2_vals, truth))
    closer = np.abs(top2_vals[hole] - truth[hole]) < np.abs(top1_vals[hole] - truth[hole])
    return 100.0 * float(closer.sum()) / k
