"""The 56-feature statistical bank computed per (period, channel) series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d

from ..errors import PeriodTooShort
from .manifests import (
    ECDF_LEVELS,
    HISTOGRAM_BINS,
    NEIGHBOURHOOD,
    STAT_MANIFEST_ID,
    STAT_MANIFEST_SPEC,
    stat_manifest,
)

MIN_PERIOD_SAMPLES = 100

_MANIFEST = stat_manifest()

CHANNELS = ("acc x", "acc y", "acc z", "gyro x", "gyro y", "gyro z")


@dataclass
class StatFeatureVector:
    values: np.ndarray
    manifest_id: str = STAT_MANIFEST_ID

    def named(self) -> dict[str, float]:
        return dict(zip(_MANIFEST, (float(v) for v in self.values)))


def zero_crossing_rate(v: np.ndarray) -> float:
    s = np.sign(v)
    return float((s[:-1] * s[1:] < 0).sum()) / (len(v) - 1)


def histogram_rel(v: np.ndarray) -> np.ndarray:
    """Relative-frequency histogram over [min, max]; constant series -> bin 0."""
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        out = np.zeros(HISTOGRAM_BINS)
        out[0] = 1.0
        return out
    counts, _ = np.histogram(v, bins=HISTOGRAM_BINS, range=(lo, hi))
    return counts / len(v)


def ecdf_percentile(sorted_v: np.ndarray, level: float) -> float:
    """Smallest sample value whose empirical CDF reaches `level`."""
    n = len(sorted_v)
    k = max(int(np.ceil(level * n)) - 1, 0)
    return float(sorted_v[k])


def neighbourhood_peaks(v: np.ndarray, n: int = NEIGHBOURHOOD) -> int:
    """Strict maxima that dominate every sample within +-n positions."""
    if len(v) < 2 * n + 1:
        return 0
    # trailing max over [j-n+1, j], shifted right by one = max of n predecessors
    trail = maximum_filter1d(v, size=n, origin=(n - 1) // 2, mode="constant", cval=-np.inf)
    left = np.concatenate(([-np.inf], trail[:-1]))
    rev = maximum_filter1d(v[::-1], size=n, origin=(n - 1) // 2, mode="constant", cval=-np.inf)
    right = np.concatenate(([-np.inf], rev[:-1]))[::-1]
    peaks = (v > left) & (v > right)
    peaks[:n] = False
    peaks[len(v) - n:] = False
    return int(peaks.sum())


def negative_turning_points(v: np.ndarray) -> int:
    interior = v[1:-1]
    return int(((interior < v[:-2]) & (interior < v[2:])).sum())


def abs_auc(v: np.ndarray, rate_hz: float) -> float:
    """Trapezoidal integral of |v| over time."""
    a = np.abs(v)
    return float((a[:-1] + a[1:]).sum() / 2.0 / rate_hz)


def _channel_features(v: np.ndarray, rate_hz: float, wanted: tuple[str, ...]) -> dict[str, float]:
    out: dict[str, float] = {}
    sorted_v: np.ndarray | None = None
    hist: np.ndarray | None = None
    mean = float(v.mean())
    d = v - mean
    m2 = float((d**2).mean())
    n = len(v)
    for feat in wanted:
        if feat == "mean":
            out[feat] = mean
        elif feat == "std":
            out[feat] = float(np.sqrt(m2))
        elif feat == "median":
            out[feat] = float(np.median(v))
        elif feat == "min":
            out[feat] = float(v.min())
        elif feat == "max":
            out[feat] = float(v.max())
        elif feat == "kurtosis":
            m4 = float((d**4).mean())
            out[feat] = m4 / m2**2 - 3.0 if m2 > 0 else 0.0
        elif feat == "skewness":
            m3 = float((d**3).mean())
            g1 = m3 / m2**1.5 if m2 > 0 else 0.0
            if m2 > 0 and n > 2:
                g1 *= np.sqrt(n * (n - 1.0)) / (n - 2.0)
            out[feat] = float(g1)
        elif feat == "abs_energy":
            out[feat] = float((v**2).sum())
        elif feat == "zero_crossing_rate":
            out[feat] = zero_crossing_rate(v)
        elif feat.startswith("histogram_"):
            if hist is None:
                hist = histogram_rel(v)
            out[feat] = float(hist[int(feat.rsplit("_", 1)[1])])
        elif feat.startswith("ecdf_perc_"):
            if sorted_v is None:
                sorted_v = np.sort(v)
            out[feat] = ecdf_percentile(sorted_v, ECDF_LEVELS[int(feat.rsplit("_", 1)[1])])
        elif feat.startswith("ecdf_percentile_count_"):
            if sorted_v is None:
                sorted_v = np.sort(v)
            val = ecdf_percentile(sorted_v, ECDF_LEVELS[int(feat.rsplit("_", 1)[1])])
            out[feat] = float(np.searchsorted(sorted_v, val, side="right"))
        elif feat == "neighbourhood_peaks":
            out[feat] = float(neighbourhood_peaks(v))
        elif feat == "negative_turning_points":
            out[feat] = float(negative_turning_points(v))
        elif feat == "auc":
            out[feat] = abs_auc(v, rate_hz)
        else:
            raise KeyError(f"unknown statistical feature {feat!r}")
    return out


def statistical_features_56(channels: dict[str, np.ndarray], rate_hz: float) -> StatFeatureVector:
    """Compute the shipped 56-feature manifest over one period.

    `channels` maps the six channel names ('acc x' .. 'gyro z') to the
    period-restricted sample arrays (calibrated g for acc, dps for gyro).
    """
    values = np.empty(len(_MANIFEST))
    pos = 0
    for channel, feats in STAT_MANIFEST_SPEC.items():
        v = np.asarray(channels[channel], dtype=np.float64)
        if len(v) < MIN_PERIOD_SAMPLES:
            raise PeriodTooShort(
                f"{channel}: {len(v)} samples in period (< {MIN_PERIOD_SAMPLES})"
            )
        computed = _channel_features(v, rate_hz, feats)
        for feat in feats:
            values[pos] = computed[feat]
            pos += 1
    return StatFeatureVector(values=values)
