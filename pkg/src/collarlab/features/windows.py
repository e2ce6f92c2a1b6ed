"""126 time- and frequency-domain features over non-overlapping 60 s windows.

All computations are vectorized across windows: windows with identical sample
counts are stacked into (k, n) matrices and reduced column-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import UniformSeries
from ..errors import NoCompleteWindow
from .manifests import AUTOCORR_LAGS, N_SPECTRUM_BINS, WINDOW_MANIFEST_ID, window_manifest

WINDOW_MS = 60_000
MIN_FILL = 0.9

_MANIFEST = window_manifest()
_INDEX = {name: i for i, name in enumerate(_MANIFEST)}


@dataclass
class WindowFeatureVector:
    window_start_ms: int
    values: np.ndarray
    manifest_id: str = WINDOW_MANIFEST_ID

    def named(self) -> dict[str, float]:
        return dict(zip(_MANIFEST, (float(v) for v in self.values)))


def _moments(x: np.ndarray):
    """Population moments m2..m4 about the mean, per row."""
    mean = x.mean(axis=1, keepdims=True)
    d = x - mean
    d2 = d * d
    m2 = d2.mean(axis=1)
    m3 = (d2 * d).mean(axis=1)
    m4 = (d2 * d2).mean(axis=1)
    return mean[:, 0], d, m2, m3, m4


def skewness(x: np.ndarray) -> np.ndarray:
    """Adjusted Fisher-Pearson coefficient; 0 for zero-variance rows."""
    n = x.shape[1]
    _, _, m2, m3, _ = _moments(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = m3 / m2**1.5
    if n > 2:
        g1 = g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0)
    return np.where(m2 > 0, g1, 0.0)


def excess_kurtosis(x: np.ndarray) -> np.ndarray:
    _, _, m2, _, m4 = _moments(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = m4 / m2**2 - 3.0
    return np.where(m2 > 0, g2, 0.0)


def _autocorr(d: np.ndarray, m2: np.ndarray, lag: int) -> np.ndarray:
    n = d.shape[1]
    if lag >= n:
        return np.zeros(len(d))
    num = (d[:, :-lag] * d[:, lag:]).sum(axis=1)
    den = m2 * n
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = num / den
    return np.where(den > 0, rho, 0.0)


def _time_block(x: np.ndarray, rate_hz: float) -> dict[str, np.ndarray]:
    k, n = x.shape
    mean, d, m2, m3, m4 = _moments(x)
    p25, p50, p75 = np.percentile(x, [25, 50, 75], axis=1)
    vmin = x.min(axis=1)
    vmax = x.max(axis=1)
    out = {
        "mean": mean,
        "std": np.sqrt(m2),
        "median": p50,
        "min": vmin,
        "max": vmax,
        "p25": p25,
        "p75": p75,
        "iqr": p75 - p25,
        "range": vmax - vmin,
        "rms": np.sqrt((x**2).mean(axis=1)),
        "mad": np.median(np.abs(x - p50[:, None]), axis=1),
        "energy": (x**2).sum(axis=1),
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = m3 / m2**1.5
        g2 = m4 / m2**2 - 3.0
    if n > 2:
        g1 = g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0)
    out["kurtosis"] = np.where(m2 > 0, g2, 0.0)
    out["skewness"] = np.where(m2 > 0, g1, 0.0)

    s = np.sign(d)
    out["mcr"] = (s[:, :-1] * s[:, 1:] < 0).sum(axis=1) / (n - 1)
    interior = x[:, 1:-1]
    out["peak_count"] = ((interior > x[:, :-2]) & (interior > x[:, 2:])).sum(axis=1).astype(float)
    for lag in AUTOCORR_LAGS:
        out[f"autocorr_{lag}"] = _autocorr(d, m2, lag)

    t = np.arange(n) / rate_hz
    t_c = t - t.mean()
    out["slope"] = (d * t_c).sum(axis=1) / (t_c @ t_c)
    return out


def _spectral_block(x: np.ndarray, rate_hz: float, full: bool) -> dict[str, np.ndarray]:
    k, n = x.shape
    spec = np.fft.rfft(x, axis=1)
    power = np.abs(spec[:, 1:]) ** 2  # DC excluded
    freqs = np.fft.rfftfreq(n, d=1.0 / rate_hz)[1:]
    total = power.sum(axis=1)
    safe = np.maximum(total, 1e-300)
    nonzero = total > 0

    peak = power.argmax(axis=1)
    out = {
        "dominant_freq": np.where(nonzero, freqs[peak], 0.0),
        "dominant_power": np.where(nonzero, power[np.arange(k), peak] / safe, 0.0),
    }
    p = power / safe[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    entropy = -plogp.sum(axis=1) / np.log(power.shape[1])
    out["spectral_entropy"] = np.where(nonzero, entropy, 0.0)

    if full:
        centroid = (p * freqs).sum(axis=1)
        spread = np.sqrt((p * (freqs - centroid[:, None]) ** 2).sum(axis=1))
        out["spectral_centroid"] = np.where(nonzero, centroid, 0.0)
        out["spectral_spread"] = np.where(nonzero, spread, 0.0)
        out["spectral_energy"] = total / n
        # bin j covers (j, j+1] * nyquist/15: exact in integers since
        # f_k <= (j+1)*nyq/15  <=>  2*15*k <= (j+1)*n
        ks = np.arange(1, power.shape[1] + 1)
        which = (2 * N_SPECTRUM_BINS * ks + n - 1) // n - 1
        for j in range(N_SPECTRUM_BINS):
            mask = which == j
            val = p[:, mask].sum(axis=1) if mask.any() else np.zeros(k)
            out[f"specbin_{j:02d}"] = np.where(nonzero, val, 0.0)
    return out


def _feature_matrix(stacks: dict[str, np.ndarray], rate_hz: float) -> np.ndarray:
    k = len(next(iter(stacks.values())))
    X = np.empty((k, len(_MANIFEST)))
    for sig in ("mag", "ax", "ay", "az"):
        block = _time_block(stacks[sig], rate_hz)
        spect = _spectral_block(stacks[sig], rate_hz, full=(sig == "mag"))
        for feat, col in block.items():
            X[:, _INDEX[f"{sig}_{feat}"]] = col
        for feat, col in spect.items():
            key = f"{sig}_{feat}"
            if key in _INDEX:
                X[:, _INDEX[key]] = col
    return X


def collect_windows(series_list: list[UniformSeries], window_ms: int = WINDOW_MS):
    """Absolute-grid windows with enough samples, as (start_ms, seg, lo, hi).

    Window boundaries are multiples of window_ms on the epoch clock, so
    windows line up across segments and with the activity timeline. A window
    qualifies when one segment contributes >= 90% of rate*window samples.
    """
    out = []
    for seg_idx, series in enumerate(series_list):
        expected = series.rate_hz * window_ms / 1000.0
        min_samples = int(np.ceil(MIN_FILL * expected))
        times_ms = series.start_ms + np.arange(len(series)) * (1000.0 / series.rate_hz)
        first_w = int(times_ms[0] // window_ms)
        last_w = int(times_ms[-1] // window_ms)
        edges = (np.arange(first_w, last_w + 2) * window_ms).astype(np.float64)
        idx = np.searchsorted(times_ms, edges, side="left")
        for k in range(len(edges) - 1):
            lo, hi = int(idx[k]), int(idx[k + 1])
            if hi - lo >= min_samples:
                out.append((int(edges[k]), seg_idx, lo, hi))
    out.sort(key=lambda w: w[0])
    return out


def window_features_126(
    magnitude: list[UniformSeries] | UniformSeries,
    axes: tuple | list,
    window_s: float = 60.0,
) -> list[WindowFeatureVector]:
    """Feature vectors for every complete 60 s window.

    `magnitude` is the conditioned acceleration signal and `axes` the three
    calibrated accelerometer axes on the same grid (each possibly split into
    gap-delimited segments).
    """
    mag_list = magnitude if isinstance(magnitude, list) else [magnitude]
    axes_lists = [a if isinstance(a, list) else [a] for a in axes]
    window_ms = int(round(window_s * 1000))

    windows = collect_windows(mag_list, window_ms)
    if not windows:
        raise NoCompleteWindow("no window had enough samples")

    by_count: dict[int, list[int]] = {}
    for i, (_, seg, lo, hi) in enumerate(windows):
        by_count.setdefault(hi - lo, []).append(i)

    rate = mag_list[0].rate_hz
    vectors: list[WindowFeatureVector | None] = [None] * len(windows)
    for count, idxs in by_count.items():
        stacks = {}
        for sig, series_list in zip(("mag", "ax", "ay", "az"), [mag_list] + axes_lists):
            rows = np.empty((len(idxs), count))
            for r, i in enumerate(idxs):
                _, seg, lo, hi = windows[i]
                rows[r] = series_list[seg].values[lo:hi]
            stacks[sig] = rows
        X = _feature_matrix(stacks, rate)
        for r, i in enumerate(idxs):
            vectors[i] = WindowFeatureVector(window_start_ms=windows[i][0], values=X[r])
    return [v for v in vectors if v is not None]
