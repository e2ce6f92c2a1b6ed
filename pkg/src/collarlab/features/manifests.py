"""Versioned feature manifests.

Every feature vector records the manifest id it was computed under, and the
manifests ship as CSV files (name, formula, channel) alongside the package so
a vector is interpretable without reading code.
"""

from __future__ import annotations

from importlib import resources

WINDOW_MANIFEST_ID = "win126-v1"
STAT_MANIFEST_ID = "stat56-v1"

AUTOCORR_LAGS = (1, 2, 3, 5, 10, 20, 50)
N_SPECTRUM_BINS = 15

_TIME_FEATURES = (
    "mean", "std", "median", "min", "max", "p25", "p75", "iqr", "range",
    "rms", "mad", "energy", "kurtosis", "skewness", "mcr", "peak_count",
) + tuple(f"autocorr_{k}" for k in AUTOCORR_LAGS) + ("slope",)

_MAG_SPECTRAL = tuple(f"specbin_{j:02d}" for j in range(N_SPECTRUM_BINS)) + (
    "dominant_freq", "dominant_power", "spectral_entropy",
    "spectral_centroid", "spectral_spread", "spectral_energy",
)

_AXIS_SPECTRAL = ("dominant_freq", "dominant_power", "spectral_entropy")

WINDOW_SIGNALS = ("mag", "ax", "ay", "az")


def window_manifest() -> list[str]:
    """126 window-feature names: 24 time-domain per signal, plus spectral."""
    names = [f"{sig}_{feat}" for sig in WINDOW_SIGNALS for feat in _TIME_FEATURES]
    names += [f"mag_{feat}" for feat in _MAG_SPECTRAL]
    names += [f"{ax}_{feat}" for ax in ("ax", "ay", "az") for feat in _AXIS_SPECTRAL]
    assert len(names) == 126
    return names


# The statistical bank spreads the feature families across the six channels
# rather than computing every family everywhere; the allocation is gyro-heavy.
STAT_MANIFEST_SPEC: dict[str, tuple[str, ...]] = {
    "acc x": ("mean", "median", "min", "max", "std", "kurtosis", "histogram_5", "ecdf_perc_0"),
    "acc y": ("mean", "std", "skewness", "zero_crossing_rate", "neighbourhood_peaks",
              "histogram_1", "histogram_8"),
    "acc z": ("mean", "std", "abs_energy", "auc", "neighbourhood_peaks", "histogram_5"),
    "gyro x": ("median", "min", "zero_crossing_rate", "ecdf_perc_0", "neighbourhood_peaks",
               "negative_turning_points", "histogram_4", "histogram_7", "histogram_8"),
    "gyro y": ("max", "kurtosis", "skewness", "zero_crossing_rate", "auc",
               "negative_turning_points", "histogram_4", "histogram_5", "histogram_7",
               "histogram_8"),
    "gyro z": ("mean", "std", "median", "min", "max", "abs_energy", "zero_crossing_rate",
               "ecdf_perc_0", "ecdf_perc_1", "ecdf_percentile_count_0",
               "ecdf_percentile_count_1", "histogram_5", "histogram_6", "histogram_7",
               "histogram_8", "histogram_9"),
}

ECDF_LEVELS = (0.2, 0.8)
HISTOGRAM_BINS = 10
NEIGHBOURHOOD = 10


def stat_manifest() -> list[str]:
    """56 statistical-bank names of the form '<sensor> <axis> <feature>'."""
    names = [f"{channel} {feat}" for channel, feats in STAT_MANIFEST_SPEC.items() for feat in feats]
    assert len(names) == 56
    return names


ACTIVITY_LEVEL_FEATURES = (
    "pct_sleep", "pct_sedentary", "pct_light", "pct_modvig",
    "accel_min", "accel_max", "accel_mean", "accel_median", "accel_std",
)

DEMOGRAPHIC_FEATURES = ("sex", "weight_kg", "age_years", "neutered", "training_rating")

OWNER_INFO_FEATURES = (
    "owner_sex",
    "owner_tipi_extraversion", "owner_tipi_agreeableness", "owner_tipi_conscientiousness",
    "owner_tipi_emotional_stability", "owner_tipi_openness",
)


def manifest_csv(manifest_id: str) -> str:
    """Render a manifest as the shipped CSV text."""
    lines = ["name,formula,channel"]
    if manifest_id == WINDOW_MANIFEST_ID:
        for name in window_manifest():
            sig, feat = name.split("_", 1)
            lines.append(f"{name},{feat},{sig}")
    elif manifest_id == STAT_MANIFEST_ID:
        for name in stat_manifest():
            channel, feat = name.rsplit(" ", 1)
            lines.append(f"{name},{feat},{channel}")
    else:
        raise ValueError(f"unknown manifest id {manifest_id!r}")
    return "\n".join(lines) + "\n"


def shipped_manifest_csv(manifest_id: str) -> str:
    fname = {
        WINDOW_MANIFEST_ID: "manifest_win126_v1.csv",
        STAT_MANIFEST_ID: "manifest_stat56_v1.csv",
    }[manifest_id]
    return resources.files("collarlab.data").joinpath(fname).read_text()
