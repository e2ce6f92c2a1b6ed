"""Day-period partition and the nine activity-level features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import UniformSeries
from ..errors import EmptySlice

PERIODS = ("N", "M", "A")
PERIOD_MS = 6 * 3600 * 1000
DAY_MS = 24 * 3600 * 1000

# local-midnight-relative bounds: N=[00:00,06:00) M=[06:00,12:00) A=[12:00,18:00)
PERIOD_BOUNDS = {
    "N": (0, PERIOD_MS),
    "M": (PERIOD_MS, 2 * PERIOD_MS),
    "A": (2 * PERIOD_MS, 3 * PERIOD_MS),
}


@dataclass(frozen=True)
class PeriodSlice:
    period: str            # N | M | A
    day_start_ms: int      # epoch ms of local midnight for the day
    tz_offset_min: int = 0

    @property
    def start_ms(self) -> int:
        return self.day_start_ms + PERIOD_BOUNDS[self.period][0]

    @property
    def end_ms(self) -> int:
        return self.day_start_ms + PERIOD_BOUNDS[self.period][1]

    def contains_ms(self, epoch_ms: np.ndarray) -> np.ndarray:
        return (epoch_ms >= self.start_ms) & (epoch_ms < self.end_ms)


def period_of_local_ms(ms_in_day: int) -> str | None:
    for p, (lo, hi) in PERIOD_BOUNDS.items():
        if lo <= ms_in_day < hi:
            return p
    return None


@dataclass
class ActivityLevelFeatures:
    pct_sleep: float
    pct_sedentary: float
    pct_light: float
    pct_modvig: float
    accel_min: float
    accel_max: float
    accel_mean: float
    accel_median: float
    accel_std: float

    def as_array(self) -> np.ndarray:
        return np.array([
            self.pct_sleep, self.pct_sedentary, self.pct_light, self.pct_modvig,
            self.accel_min, self.accel_max, self.accel_mean, self.accel_median,
            self.accel_std,
        ])


def activity_level_features(
    window_starts_ms: np.ndarray,
    labels: np.ndarray,
    magnitude: list[UniformSeries] | UniformSeries,
    slice_: PeriodSlice,
) -> ActivityLevelFeatures:
    """Occupancy percentages and acceleration stats within one period.

    `labels` are integer activity levels (0 sleep, 1 sedentary, 2 light,
    3 moderate-vigorous) per 60 s window start.
    """
    window_starts_ms = np.asarray(window_starts_ms, dtype=np.int64)
    labels = np.asarray(labels)
    mag_list = magnitude if isinstance(magnitude, list) else [magnitude]

    in_slice = slice_.contains_ms(window_starts_ms)
    samples = []
    for series in mag_list:
        t_ms = series.start_ms + np.arange(len(series)) * (1000.0 / series.rate_hz)
        m = (t_ms >= slice_.start_ms) & (t_ms < slice_.end_ms)
        if m.any():
            samples.append(series.values[m])
    if not in_slice.any() or not samples:
        raise EmptySlice(f"period {slice_.period} has no labeled windows or samples")

    counts = np.bincount(labels[in_slice], minlength=4).astype(float)
    pct = counts / counts.sum()
    v = np.concatenate(samples)
    return ActivityLevelFeatures(
        pct_sleep=float(pct[0]),
        pct_sedentary=float(pct[1]),
        pct_light=float(pct[2]),
        pct_modvig=float(pct[3]),
        accel_min=float(v.min()),
        accel_max=float(v.max()),
        accel_mean=float(v.mean()),
        accel_median=float(np.median(v)),
        accel_std=float(v.std()),
    )
