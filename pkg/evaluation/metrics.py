"""Accuracy metrics for a restored missing data segment."""

import logging
from typing import NamedTuple

import numpy as np

from core_numerics.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("mpe", "rmse", "pke", "vle", "egye", "fce")


class PointwiseMetrics(NamedTuple):
    mpe: float
    rmse: float
    pke: float
    vle: float
    egye: float


def _pair(truth, restored):
    truth = np.asarray(truth, dtype=np.float64)
    restored = np.asarray(restored, dtype=np.float64)
    if truth.shape != restored.shape or truth.ndim != 1:
        raise ShapeError(f"truth {truth.shape} and restored {restored.shape} must be equal 1-D")
    if truth.size < 1:
        raise DataError("metrics need at least one point")
    return truth, restored


def compute_pointwise(truth, restored, scale: float = 1.0) -> PointwiseMetrics:
    """
    MPE, RMSE, PKE, VLE and EGYE over one segment.

    RMSE is divided by ``scale`` (pass p_max to report it in normalized units
    when the inputs are in kW); the other four are ratios.
    """
    truth, restored = _pair(truth, restored)
    if np.any(truth <= 0):
        raise DataError("truth must be strictly positive")
    if scale <= 0:
        raise DataError(f"RMSE scale must be positive, got {scale}")
    err = restored - truth
    return PointwiseMetrics(
        mpe=float(np.mean(np.abs(err) / truth)),
        rmse=float(np.sqrt(np.mean(err * err)) / scale),
        pke=float(abs(restored.max() - truth.max()) / truth.max()),
        vle=float(abs(restored.min() - truth.min()) / truth.min()),
        egye=float(abs(restored.sum() - truth.sum()) / truth.sum()),
    )


def compute_fce(truth, restored, eps: float = 1e-8) -> float:
    """Mean relative error of spectrum magnitudes over bins whose truth magnitude is ≥ eps."""
    truth, restored = _pair(truth, restored)
    if truth.size < 2:
        raise DataError("FCE needs at least 2 points")
    ref = np.abs(np.fft.rfft(truth))
    got = np.abs(np.fft.rfft(restored))
    keep = ref >= eps
    if not keep.any():
        raise DataError("every frequency bin of the truth is below eps")
    return float(np.mean(np.abs(got[keep] - ref[keep]) / ref[keep]))
