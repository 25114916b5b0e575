"""
Evaluation report.
Per-segment metrics for every restored window, unweighted dataset means and,
when a second candidate exists, the top-2/combined comparison with PoCP.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from agents.bert_pin.selection import ForkRecord, combine_candidates, pocp
from core_numerics.errors import DataError
from evaluation.metrics import METRIC_NAMES, compute_fce, compute_pointwise
from load_data.windows import mask_segments

logger = logging.getLogger(__name__)


@dataclass
class WindowRestoration:
    """
    Normalized truth and candidates for one window plus its kW scale.

    ``segments`` are inclusive (start, end) pairs; when empty they are the runs
    of zeros in ``mask``.
    """

    window_id: int
    truth_norm: np.ndarray
    top1_norm: np.ndarray
    mask: np.ndarray
    p_max: float
    top2_norm: Optional[np.ndarray] = None
    forks: List[ForkRecord] = field(default_factory=list)
    segments: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.truth_norm)
        arrays = [self.top1_norm, self.mask] + ([self.top2_norm] if self.top2_norm is not None else [])
        if any(len(a) != n for a in arrays):
            raise DataError(f"window {self.window_id}: restoration arrays differ in length")
        if not self.segments:
            self.segments = mask_segments(self.mask)
        for ts, te in self.segments:
            if not 0 <= ts <= te < n or np.any(np.asarray(self.mask)[ts:te + 1] != 0):
                raise DataError(f"window {self.window_id}: segment ({ts}, {te}) is not fully masked")


def _segment_metrics(truth_kw: np.ndarray, restored_kw: np.ndarray, p_max: float) -> Dict[str, float]:
    values = compute_pointwise(truth_kw, restored_kw, scale=p_max)._asdict()
    values["fce"] = compute_fce(truth_kw, restored_kw) if len(truth_kw) >= 2 else float("nan")
    return values


def _means(rows: List[Dict[str, float]]) -> Dict[str, float]:
    if not rows:
        return {}
    return {name: float(np.nanmean([r[name] for r in rows])) for name in METRIC_NAMES}


def assemble_report(
    restorations: Sequence[WindowRestoration],
    config_digest: str = "",
    method: str = "top1",
    e: Optional[float] = None,
) -> Dict[str, object]:
    """Build the JSON-ready report dictionary."""
    if not restorations:
        raise DataError("report needs at least one window")
    lengths = {len(r.truth_norm) for r in restorations}
    if len(lengths) > 1:
        raise DataError(f"mixed window lengths in one report: {sorted(lengths)}")

    per_window, per_window_top2, per_window_combined = [], [], []
    closer, counted = 0.0, 0
    forks = []
    for r in restorations:
        truth_kw = np.asarray(r.truth_norm) * r.p_max
        top1_kw = np.asarray(r.top1_norm) * r.p_max
        top2_kw = np.asarray(r.top2_norm) * r.p_max if r.top2_norm is not None else None
        for idx, (ts, te) in enumerate(r.segments):
            seg = slice(ts, te + 1)
            base = {"window_id": r.window_id, "mds_index": idx}
            per_window.append({**base, **_segment_metrics(truth_kw[seg], top1_kw[seg], r.p_max)})
            if top2_kw is not None:
                combined = combine_candidates(top1_kw[seg], top2_kw[seg], truth_kw[seg])
                per_window_top2.append({**base, **_segment_metrics(truth_kw[seg], top2_kw[seg], r.p_max)})
                per_window_combined.append({**base, **_segment_metrics(truth_kw[seg], combined, r.p_max)})
        if top2_kw is not None:
            k = int((np.asarray(r.mask) == 0).sum())
            if k:
                closer += pocp(top1_kw, top2_kw, truth_kw, r.mask) * k / 100.0
                counted += k
        forks += [{"window_id": r.window_id, **f.to_dict()} for f in r.forks]

    if not per_window:
        raise DataError("no masked segments to evaluate")
    report: Dict[str, object] = {
        "method": method,
        "e": e,
        "config_digest": config_digest,
        "windows": len(restorations),
        "segments": len(per_window),
        "per_window": per_window,
        "aggregate": _means(per_window),
    }
    if per_window_top2:
        report["per_window_top2"] = per_window_top2
        report["aggregate_top2"] = _means(per_window_top2)
        report["aggregate_combined"] = _means(per_window_combined)
        report["pocp"] = 100.0 * closer / counted if counted else None
    if forks:
        report["forks"] = forks
    return report


def write_report(report: Dict[str, object], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("Wrote metrics report to %s", path)
    return path
