"""
Fleet Load Profiles
Synthetic smart-meter fleet, CSV ingestion and feeder-level aggregation.

A fleet is a list of per-user 15-minute load series sharing one timebase plus
one ambient temperature series. ``aggregate_fleet`` draws k users, sums them
and normalizes the feeder profile by its peak; ``align_profile`` puts the
temperature on the same timebase and normalizes it by its extremes.
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from core_numerics.errors import DataError

logger = logging.getLogger(__name__)

STEP_MINUTES = 15
STEP = pd.Timedelta(minutes=STEP_MINUTES)
POINTS_PER_DAY = 24 * 60 // STEP_MINUTES
USER_CHUNK = 256


@dataclass
class RawSeries:
    """A 15-minute series of kW (load) or °C (temperature); NaN marks a missing reading."""

    timestamps: pd.DatetimeIndex
    values: np.ndarray
    name: str = ""
    unit: str = "kW"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.timestamps) != self.values.shape[0] or self.values.ndim != 1:
            raise DataError(
                f"series {self.name!r}: {len(self.timestamps)} timestamps for "
                f"values of shape {self.values.shape}"
            )
        if len(self.timestamps) > 1:
            steps = np.diff(self.timestamps.asi8)
            if not np.all(steps == STEP.value):
                raise DataError(f"series {self.name!r}: timestamps are not on a 15-minute grid")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class AlignedProfile:
    """Normalized feeder load and temperature on a shared timebase."""

    load_norm: np.ndarray
    temp_norm: np.ndarray
    p_max: float
    t_min: float
    t_max: float
    start_timestamp: pd.Timestamp
    profile_id: int = 0

    def __post_init__(self):
        if self.load_norm.shape != self.temp_norm.shape:
            raise DataError(
                f"load {self.load_norm.shape} and temperature {self.temp_norm.shape} "
                "do not share a timebase"
            )
        finite = self.load_norm[np.isfinite(self.load_norm)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise DataError("normalized load must lie in [0, 1]")

    def __len__(self) -> int:
        return self.load_norm.shape[0]

    @property
    def load_kw(self) -> np.ndarray:
        return self.load_norm * self.p_max

    def constants(self) -> Dict[str, object]:
        return {
            "profile_id": self.profile_id,
            "p_max": self.p_max,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "start": self.start_timestamp.isoformat(),
        }


@dataclass
class FleetParams:
    """
    Knobs of the synthetic household generator.

    Defaults are calibrated so that 2000 aggregated users land roughly in the
    210–1751 kW band with daily peak-to-trough ratios between 1.5 and 4.
    """

    base_kw: float = 0.15
    user_spread: float = 0.3
    morning_kw: float = 0.2
    morning_hour: float = 7.5
    evening_kw: float = 0.4
    evening_hour: float = 19.0
    peak_width_h: float = 1.5
    peak_jitter_h: float = 1.0
    cooling_kw_per_c: float = 0.04
    heating_kw_per_c: float = 0.02
    t_cool: float = 22.0
    t_heat: float = 12.0
    weekend_factor: float = 1.1
    noise_kw: float = 0.05
    noise_phi: float = 0.8
    standby_kw: float = 0.05
    temp_mean: float = 16.0
    temp_seasonal: float = 11.0
    temp_diurnal: float = 4.0
    temp_noise: float = 0.5
    temp_noise_phi: float = 0.95
    start: str = "2019-01-01"

    def __post_init__(self):
        non_negative = (
            "morning_kw", "evening_kw", "cooling_kw_per_c", "heating_kw_per_c",
            "noise_kw", "standby_kw", "user_spread", "peak_jitter_h",
            "temp_seasonal", "temp_diurnal", "temp_noise",
        )
        for name in non_negative:
            if getattr(self, name) < 0:
                raise DataError(f"fleet parameter {name} must be >= 0, got {getattr(self, name)}")
        if self.base_kw <= 0:
            raise DataError(f"fleet parameter base_kw must be > 0, got {self.base_kw}")
        if self.weekend_factor <= 0:
            raise DataError(f"weekend_factor must be > 0, got {self.weekend_factor}")
        if self.peak_width_h <= 0:
            raise DataError(f"peak_width_h must be > 0, got {self.peak_width_h}")
        if not (0.0 <= self.noise_phi < 1.0 and 0.0 <= self.temp_noise_phi < 1.0):
            raise DataError("AR(1) coefficients must lie in [0, 1)")
        if self.t_heat > self.t_cool:
            raise DataError(f"t_heat ({self.t_heat}) must not exceed t_cool ({self.t_cool})")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _ar1(rng: np.random.Generator, shape: Tuple[int, ...], sigma: float, phi: float) -> np.ndarray:
    """Stationary AR(1) noise along the last axis."""
    if sigma == 0.0:
        return np.zeros(shape)
    innovations = rng.standard_normal(shape)
    innovations[..., 1:] *= sigma * math.sqrt(1.0 - phi * phi)
    innovations[..., 0] *= sigma
    return lfilter([1.0], [1.0, -phi], innovations, axis=-1)


def _circular_bump(hours: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    diff = (hours[None, :] - centers[:, None] + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (diff / width) ** 2)


def generate_synthetic_fleet(
    n_users: int, n_days: int, params: Optional[FleetParams] = None, seed: int = 0
) -> Tuple[List[RawSeries], RawSeries]:
    """
    Simulate ``n_users`` household loads and one temperature series.

    Temperature is a seasonal plus a diurnal sinusoid plus AR(1) noise. Each
    user adds a base load, morning and evening peaks, cooling and heating terms
    driven by the temperature, a weekend factor and AR(1) noise; loads are
    floored at the standby level. Identical seeds give identical output.
    """
    if n_users < 1 or n_days < 1:
        raise DataError(f"need n_users >= 1 and n_days >= 1, got {n_users}, {n_days}")
    params = params or FleetParams()
    rng = np.random.default_rng(seed)

    n_points = n_days * POINTS_PER_DAY
    timestamps = pd.date_range(pd.Timestamp(params.start, tz="UTC"), periods=n_points, freq=STEP)
    hours = np.asarray(timestamps.hour + timestamps.minute / 60.0, dtype=np.float64)
    doy = np.asarray(timestamps.dayofyear, dtype=np.float64) + hours / 24.0
    weekend = np.asarray(timestamps.dayofweek >= 5)

    temp = (
        params.temp_mean
        - params.temp_seasonal * np.cos(2.0 * math.pi * (doy - 15.0) / 365.25)
        - params.temp_diurnal * np.cos(2.0 * math.pi * (hours - 3.0) / 24.0)
        + _ar1(rng, (n_points,), params.temp_noise, params.temp_noise_phi)
    )
    cooling_drive = np.maximum(0.0, temp - params.t_cool)
    heating_drive = np.maximum(0.0, params.t_heat - temp)
    day_factor = np.where(weekend, params.weekend_factor, 1.0)

    sigma = params.user_spread
    scales = np.exp(sigma * rng.standard_normal(n_users) - 0.5 * sigma * sigma)
    jitter = params.peak_jitter_h
    morning_centers = params.morning_hour + rng.uniform(-jitter, jitter, n_users)
    evening_centers = params.evening_hour + rng.uniform(-jitter, jitter, n_users)
    cooling_share = rng.uniform(0.5, 1.5, n_users)
    heating_share = rng.uniform(0.5, 1.5, n_users)

    loads = np.empty((n_users, n_points))
    for lo in range(0, n_users, USER_CHUNK):
        hi = min(lo + USER_CHUNK, n_users)
        shape = (
            params.morning_kw * _circular_bump(hours, morning_centers[lo:hi], params.peak_width_h)
            + params.evening_kw * _circular_bump(hours, evening_centers[lo:hi], params.peak_width_h)
        )
        chunk = scales[lo:hi, None] * (params.base_kw + shape * day_factor[None, :])
        chunk += params.cooling_kw_per_c * cooling_share[lo:hi, None] * cooling_drive[None, :]
        chunk += params.heating_kw_per_c * heating_share[lo:hi, None] * heating_drive[None, :]
        chunk += _ar1(rng, (hi - lo, n_points), params.noise_kw, params.noise_phi)
        loads[lo:hi] = np.maximum(chunk, params.standby_kw)

    users = [
        RawSeries(timestamps, loads[u], name=f"user_{u:05d}", unit="kW") for u in range(n_users)
    ]
    temperature = RawSeries(timestamps, temp, name="temperature", unit="degC")
    logger.info(
        "Generated %d synthetic users over %d days (%d points)", n_users, n_days, n_points
    )
    return users, temperature


def _normalize_temperature(
    timestamps: pd.DatetimeIndex, temperature: Optional[RawSeries]
) -> Tuple[np.ndarray, float, float]:
    if temperature is None:
        return np.zeros(len(timestamps)), 0.0, 0.0
    if temperature.timestamps.equals(timestamps):
        values = temperature.values.copy()
    else:
        series = pd.Series(temperature.values, index=temperature.timestamps)
        union = series.index.union(timestamps)
        values = series.reindex(union).interpolate(method="time").reindex(timestamps).to_numpy()
    if np.isnan(values).any():
        raise DataError("temperature series does not cover the load timebase")
    t_min, t_max = float(values.min()), float(values.max())
    if t_max > t_min:
        temp_norm = (values - t_min) / (t_max - t_min)
    else:
        temp_norm = np.zeros_like(values)
    return temp_norm, t_min, t_max


def align_profile(
    timestamps: pd.DatetimeIndex,
    load_kw: np.ndarray,
    temperature: Optional[RawSeries] = None,
    floor: float = 0.0,
    profile_id: int = 0,
) -> AlignedProfile:
    """Normalize a feeder load by its peak and its temperature by the horizon extremes."""
    load_kw = np.asarray(load_kw, dtype=np.float64)
    if load_kw.size == 0 or np.all(np.isnan(load_kw)):
        raise DataError("cannot align an empty load profile")
    p_max = float(np.nanmax(load_kw))
    if p_max <= 0.0:
        raise DataError(f"aggregate peak must be positive, got {p_max}")
    load_norm = np.maximum(load_kw / p_max, floor)
    temp_norm, t_min, t_max = _normalize_temperature(timestamps, temperature)
    return AlignedProfile(
        load_norm=load_norm,
        temp_norm=temp_norm,
        p_max=p_max,
        t_min=t_min,
        t_max=t_max,
        start_timestamp=timestamps[0],
        profile_id=profile_id,
    )


def aggregate_fleet(
    users: Sequence[RawSeries],
    k: int,
    seed: int = 0,
    temperature: Optional[RawSeries] = None,
    floor: float = 0.0,
    profile_id: int = 0,
) -> AlignedProfile:
    """Draw k users without replacement, sum them and normalize by the horizon peak."""
    if not users:
        raise DataError("cannot aggregate an empty user pool")
    if not 1 <= k <= len(users):
        raise DataError(f"k must lie in [1, {len(users)}], got {k}")
    timebase = users[0].timestamps
    for user in users[1:]:
        if not user.timestamps.equals(timebase):
            raise DataError(f"user {user.name!r} does not share the fleet timebase")

    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(users), size=k, replace=False))
    total = np.zeros(len(timebase))
    for idx in chosen:
        total += users[idx].values
    profile = align_profile(timebase, total, temperature, floor=floor, profile_id=profile_id)
    logger.debug("Aggregated %d of %d users, p_max %.1f kW", k, len(users), profile.p_max)
    return profile


# -----------------------------------------------------------------------------
# CSV ingestion
# -----------------------------------------------------------------------------


def _read_timestamped(path: Union[str, Path], value_column: str) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing = {"timestamp", value_column} - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], utc=True, errors="coerce")
    if frame["timestamp"].isna().any():
        raise DataError(f"{path}: unparseable timestamps")
    if not (frame["timestamp"] == frame["timestamp"].dt.floor(STEP)).all():
        raise DataError(f"{path}: timestamps off the 15-minute grid")
    frame[value_column] = pd.to_numeric(frame[value_column], errors="coerce")
    return frame


def _grid(starts: Iterable[pd.Timestamp], ends: Iterable[pd.Timestamp]) -> pd.DatetimeIndex:
    return pd.date_range(min(starts), max(ends), freq=STEP)


def ingest_load_csv(paths: Union[str, Path, Sequence[Union[str, Path]]]) -> List[RawSeries]:
    """
    Read ``timestamp,load_kw`` files (one per user) or a long file with ``user_id``.

    All users are put on one 15-minute grid spanning the union of their
    horizons; absent readings become NaN markers.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    per_user: Dict[str, pd.Series] = {}
    for path in paths:
        frame = _read_timestamped(path, "load_kw")
        if "user_id" in frame.columns:
            groups = frame.groupby("user_id", sort=True)
        else:
            groups = [(Path(path).stem, frame)]
        for user_id, group in groups:
            series = group.set_index("timestamp")["load_kw"].sort_index()
            if series.index.has_duplicates:
                raise DataError(f"user {user_id}: duplicate timestamps")
            if (series < 0).any():
                raise DataError(f"user {user_id}: negative load readings")
            key = str(user_id)
            if key in per_user:
                raise DataError(f"user {user_id} appears in more than one file")
            per_user[key] = series
    if not per_user:
        raise DataError("no load series found")

    grid = _grid((s.index[0] for s in per_user.values()), (s.index[-1] for s in per_user.values()))
    users = []
    for key in sorted(per_user):
        values = per_user[key].reindex(grid).to_numpy(dtype=np.float64)
        gaps = int(np.isnan(values).sum())
        if gaps:
            logger.warning("User %s has %d missing readings", key, gaps)
        users.append(RawSeries(grid, values, name=key, unit="kW"))
    logger.info("Ingested %d users on a %d-point grid", len(users), len(grid))
    return users


def ingest_temperature_csv(path: Union[str, Path]) -> RawSeries:
    """Read ``timestamp,temp_c``; gaps are filled by linear interpolation in time."""
    frame = _read_timestamped(path, "temp_c")
    series = frame.set_index("timestamp")["temp_c"].sort_index()
    if series.index.has_duplicates:
        raise DataError(f"{path}: duplicate timestamps")
    grid = _grid([series.index[0]], [series.index[-1]])
    series = series.reindex(grid)
    gaps = int(series.isna().sum())
    if gaps:
        logger.info("Interpolating %d missing temperature readings", gaps)
        series = series.interpolate(method="time", limit_direction="both")
    if series.isna().any():
        raise DataError(f"{path}: temperature series has no valid readings")
    return RawSeries(grid, series.to_numpy(dtype=np.float64), name="temperature", unit="degC")


def _iso(timestamps: pd.DatetimeIndex) -> np.ndarray:
    return np.asarray(timestamps.strftime("%Y-%m-%dT%H:%M:%SZ"))


def write_user_csvs(
    users: Sequence[RawSeries], temperature: RawSeries, directory: Union[str, Path]
) -> Tuple[Path, Path]:
    """Write the fleet as a long ``timestamp,user_id,load_kw`` file plus ``temperature.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stamps = _iso(users[0].timestamps)
    frame = pd.DataFrame(
        {
            "timestamp": np.tile(stamps, len(users)),
            "user_id": np.repeat([u.name for u in users], len(stamps)),
            "load_kw": np.concatenate([u.values for u in users]),
        }
    )
    users_path = directory / "users.csv"
    frame.to_csv(users_path, index=False)
    temp_path = directory / "temperature.csv"
    pd.DataFrame({"timestamp": _iso(temperature.timestamps), "temp_c": temperature.values}).to_csv(
        temp_path, index=False
    )
    logger.info("Wrote %d user series to %s", len(users), users_path)
    return users_path, temp_path
