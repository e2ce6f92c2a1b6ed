"""Acceleration conditioning: static-window calibration onto the unit gravity
sphere, linear resampling, vector magnitude, zero-phase Butterworth low-pass,
and gravity removal with truncation at zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt, lfilter

from .errors import GridMismatch, InsufficientOrientations, InvalidCutoff, NonConvergence, TooFewSamples
from .ingest import SensorSession

logger = logging.getLogger(__name__)

DEFAULT_STD_THRESH_G = 0.013
DEFAULT_CUTOFF_HZ = 20.0       # at the 100 Hz working rate
GAP_THRESHOLD_S = 2.0
ORIENTATION_ANGLE_DEG = 20.0
MIN_STATIC_WINDOWS = 9
MIN_ORIENTATIONS = 3
LM_MAX_ITER = 200


@dataclass
class UniformSeries:
    """Evenly sampled series; sample k is at start_ms/1000 + k/rate_hz seconds."""

    start_ms: int
    rate_hz: float
    values: np.ndarray
    unit: str = "g"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")

    def __len__(self) -> int:
        return len(self.values)

    def times_s(self) -> np.ndarray:
        return self.start_ms / 1000.0 + np.arange(len(self.values)) / self.rate_hz

    def end_ms(self) -> float:
        return self.start_ms + (len(self.values) - 1) * 1000.0 / self.rate_hz


@dataclass
class CalibrationParams:
    gain: np.ndarray = field(default_factory=lambda: np.ones(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    residual_rms: float = 0.0
    n_static_windows: int = 0

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)

    def apply(self, accel_g: np.ndarray) -> np.ndarray:
        """Map raw accelerometer g-values (n, 3) onto the calibrated frame."""
        return accel_g * self.gain + self.offset

    def to_json(self) -> str:
        return json.dumps(
            {
                "gain": [float(v) for v in self.gain],
                "offset": [float(v) for v in self.offset],
                "residual_rms": float(self.residual_rms),
                "n_static_windows": int(self.n_static_windows),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationParams":
        d = json.loads(text)
        return cls(
            gain=np.asarray(d["gain"], dtype=np.float64),
            offset=np.asarray(d["offset"], dtype=np.float64),
            residual_rms=float(d["residual_rms"]),
            n_static_windows=int(d["n_static_windows"]),
        )

    @classmethod
    def identity(cls, n_static_windows: int = 0) -> "CalibrationParams":
        return cls(n_static_windows=n_static_windows)


# --------------------------------------------------------------------------
# static windows and sphere calibration


def detect_static_windows(
    session: SensorSession,
    window_s: float = 10.0,
    std_thresh_g: float = DEFAULT_STD_THRESH_G,
) -> list[tuple[int, int]]:
    """Non-overlapping stillness windows as (start, stop) sample index pairs.

    A window qualifies when it holds >=90% of the expected samples and every
    accelerometer axis has standard deviation below std_thresh_g.
    """
    ts = session.timestamps_ms
    accel = session.accel_g()
    window_ms = int(round(window_s * 1000))
    min_samples = int(math.ceil(0.9 * session.nominal_rate_hz * window_s))
    t0 = int(ts[0])
    n_windows = int((int(ts[-1]) - t0) // window_ms) + 1
    edges = t0 + np.arange(n_windows + 1, dtype=np.int64) * window_ms
    idx = np.searchsorted(ts, edges)
    counts = np.diff(idx)

    full = int(round(session.nominal_rate_hz * window_s))
    if np.all(counts[:-1] == full) and counts[-1] <= full:
        # uniform grid: one reshaped std pass instead of a per-window loop
        body = accel[: (n_windows - 1) * full].reshape(n_windows - 1, full, 3)
        ok = np.all(body.std(axis=1) < std_thresh_g, axis=1)
        out = [(w * full, (w + 1) * full) for w in np.flatnonzero(ok)]
        if counts[-1] >= min_samples:
            lo, hi = int(idx[-2]), int(idx[-1])
            if np.all(accel[lo:hi].std(axis=0) < std_thresh_g):
                out.append((lo, hi))
        return out

    out = []
    for k in range(n_windows):
        lo, hi = int(idx[k]), int(idx[k + 1])
        if hi - lo < min_samples:
            continue
        if np.all(accel[lo:hi].std(axis=0) < std_thresh_g):
            out.append((lo, hi))
    return out


def static_window_means(session: SensorSession, windows: list[tuple[int, int]]) -> np.ndarray:
    """(w, 3) mean raw accelerometer vector in g for each static window."""
    accel = session.accel_g()
    return np.array([accel[lo:hi].mean(axis=0) for lo, hi in windows])


def count_orientations(means: np.ndarray, angle_deg: float = ORIENTATION_ANGLE_DEG) -> int:
    """Greedy count of distinct pointing directions among window means."""
    if len(means) == 0:
        return 0
    units = means / np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    cos_thresh = math.cos(math.radians(angle_deg))
    reps: list[np.ndarray] = []
    for u in units:
        if not any(float(np.dot(u, r)) > cos_thresh for r in reps):
            reps.append(u)
    return len(reps)


def fit_calibration(static_means: np.ndarray, max_iter: int = LM_MAX_ITER) -> CalibrationParams:
    """Fit per-axis gain/offset so static means land on the unit gravity sphere.

    Minimizes sum_w (||gain*m_w + offset|| - 1)^2 by Levenberg-Marquardt from
    the identity start. Returns identity parameters when the fit does not
    improve on them.
    """
    m = np.asarray(static_means, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 3 or len(m) < MIN_STATIC_WINDOWS:
        raise InsufficientOrientations(
            f"need >= {MIN_STATIC_WINDOWS} static windows, got {0 if m.ndim != 2 else len(m)}"
        )
    n_orient = count_orientations(m)
    if n_orient < MIN_ORIENTATIONS:
        raise InsufficientOrientations(
            f"need >= {MIN_ORIENTATIONS} distinct orientations, got {n_orient}"
        )

    def residuals(p: np.ndarray) -> np.ndarray:
        v = m * p[:3] + p[3:]
        return np.linalg.norm(v, axis=1) - 1.0

    p = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    r = residuals(p)
    cost = float(r @ r)
    identity_cost = cost
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        v = m * p[:3] + p[3:]
        norms = np.maximum(np.linalg.norm(v, axis=1), 1e-12)
        jac = np.empty((len(m), 6))
        jac[:, :3] = v * m / norms[:, None]
        jac[:, 3:] = v / norms[:, None]
        jtj = jac.T @ jac
        jtr = jac.T @ r
        if float(np.max(np.abs(jtr))) < 1e-14:
            converged = True
            break
        step_ok = False
        for _ in range(20):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + delta
            r_new = residuals(p_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                improvement = cost - cost_new
                p, r, cost = p_new, r_new, cost_new
                lam = max(lam / 3, 1e-12)
                step_ok = True
                if improvement < 1e-15:
                    converged = True
                break
            lam *= 10
        if not step_ok:
            converged = True  # no descent direction left
            break
        if converged:
            break
    else:
        raise NonConvergence(f"calibration did not converge in {max_iter} iterations")

    if identity_cost - cost < 1e-12:
        return CalibrationParams.identity(n_static_windows=len(m))
    return CalibrationParams(
        gain=p[:3].copy(),
        offset=p[3:].copy(),
        residual_rms=float(np.sqrt(cost / len(m))),
        n_static_windows=len(m),
    )


# --------------------------------------------------------------------------
# resampling


def resample_linear(
    timestamps_ms: np.ndarray,
    values: np.ndarray,
    target_hz: float = 100.0,
    gap_threshold_s: float = GAP_THRESHOLD_S,
    unit: str = "g",
) -> list[UniformSeries]:
    """Linear interpolation onto a uniform grid, never bridging gaps.

    The grid starts at the first sample and steps by 1/target_hz; spans with
    inter-sample gaps above gap_threshold_s are resampled as separate series.
    No extrapolation beyond the last sample of each span.
    """
    series = resample_block(timestamps_ms, np.asarray(values, dtype=np.float64)[:, None],
                            target_hz, gap_threshold_s, (unit,))
    return [s[0] for s in series]


def resample_block(
    timestamps_ms: np.ndarray,
    values: np.ndarray,
    target_hz: float,
    gap_threshold_s: float = GAP_THRESHOLD_S,
    units: tuple[str, ...] | None = None,
) -> list[list[UniformSeries]]:
    """resample_linear over a (n, c) block of channels sharing one time base.

    Returns one list of per-channel UniformSeries per gap-free span; the
    interpolation index arithmetic is shared across channels.
    """
    ts = np.asarray(timestamps_ms, dtype=np.int64)
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or len(ts) != len(x):
        raise GridMismatch("values must be (n, channels) matching timestamps")
    n_ch = x.shape[1]
    units = units or ("g",) * n_ch
    if len(ts) < 2:
        raise TooFewSamples(f"need >= 2 samples, got {len(ts)}")

    breaks = np.flatnonzero(np.diff(ts) > gap_threshold_s * 1000)
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks + 1, [len(ts)]))

    out: list[list[UniformSeries]] = []
    step_ms = 1000.0 / target_hz
    for lo, hi in zip(starts, stops):
        if hi - lo < 2:
            logger.debug("skipping single-sample fragment at %d", int(ts[lo]))
            continue
        seg_ts = ts[lo:hi]
        seg_x = x[lo:hi]
        span_ms = float(seg_ts[-1] - seg_ts[0])
        n_out = int(math.floor(span_ms / step_ms)) + 1
        dts = np.diff(seg_ts)
        if dts.min() == dts.max():
            y = _lerp_uniform(seg_x, n_out, step_ms / float(dts[0]))
        else:
            grid = seg_ts[0] + np.arange(n_out) * step_ms
            ft = seg_ts.astype(np.float64)
            y = np.column_stack([np.interp(grid, ft, seg_x[:, c]) for c in range(n_ch)])
        out.append([
            UniformSeries(start_ms=int(seg_ts[0]), rate_hz=target_hz, values=y[:, c], unit=units[c])
            for c in range(n_ch)
        ])
    if not out:
        raise TooFewSamples("no span had >= 2 samples")
    return out


def _lerp_uniform(x: np.ndarray, n_out: int, ratio: float) -> np.ndarray:
    """Linear interpolation of a uniformly spaced (n, c) block at positions
    k*ratio. When ratio is a small rational a/b the work reduces to b strided
    slice operations with constant weights."""
    from fractions import Fraction

    frac_ratio = Fraction(ratio).limit_denominator(64)
    a, b = frac_ratio.numerator, frac_ratio.denominator
    if abs(float(frac_ratio) - ratio) < 1e-12 and a > 0:
        y = np.empty((n_out, x.shape[1]))
        for j in range(b):
            m = (n_out - j + b - 1) // b
            if m <= 0:
                continue
            pos0 = j * a / b
            i0 = (j * a) // b
            f = pos0 - i0
            lo_slice = x[i0 : i0 + (m - 1) * a + 1 : a]
            if f == 0.0:
                y[j::b] = lo_slice
            else:
                hi_slice = x[i0 + 1 : i0 + 1 + (m - 1) * a + 1 : a]
                y[j::b] = lo_slice * (1.0 - f) + hi_slice * f
        return y
    pos = np.arange(n_out) * ratio
    i = np.minimum(pos.astype(np.int64), len(x) - 2)
    frac = (pos - i)[:, None]
    return x[i] * (1.0 - frac) + x[i + 1] * frac


# --------------------------------------------------------------------------
# magnitude / filter / truncation


def magnitude(xs: UniformSeries, ys: UniformSeries, zs: UniformSeries) -> UniformSeries:
    for other in (ys, zs):
        if (
            other.start_ms != xs.start_ms
            or other.rate_hz != xs.rate_hz
            or len(other) != len(xs)
        ):
            raise GridMismatch("axis series are not on a common grid")
    v = np.sqrt(xs.values**2 + ys.values**2 + zs.values**2)
    return UniformSeries(start_ms=xs.start_ms, rate_hz=xs.rate_hz, values=v, unit=xs.unit)


def design_lowpass(cutoff_hz: float, rate_hz: float, order: int = 4):
    """Butterworth low-pass (b, a) via bilinear transform with prewarping."""
    if not 0 < cutoff_hz < rate_hz / 2:
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz not in (0, {rate_hz / 2}) Hz")
    return butter(order, cutoff_hz / (rate_hz / 2), btype="low")


def butterworth_lowpass(series: UniformSeries, cutoff_hz: float, order: int = 4) -> UniformSeries:
    """Zero-phase (forward-backward) low-pass; reflective edge padding."""
    b, a = design_lowpass(cutoff_hz, series.rate_hz, order)
    padlen = min(3 * order, len(series) - 1)
    y = filtfilt(b, a, series.values, padtype="even", padlen=padlen)
    return UniformSeries(series.start_ms, series.rate_hz, y, unit=series.unit)


def lowpass_single_pass(series: UniformSeries, cutoff_hz: float, order: int = 4) -> UniformSeries:
    """One causal pass of the same filter (for gain measurements)."""
    b, a = design_lowpass(cutoff_hz, series.rate_hz, order)
    return UniformSeries(series.start_ms, series.rate_hz, lfilter(b, a, series.values), unit=series.unit)


def enmo_truncate(series: UniformSeries) -> UniformSeries:
    """Remove one gravity unit and truncate negatives at zero."""
    return UniformSeries(
        start_ms=series.start_ms,
        rate_hz=series.rate_hz,
        values=np.maximum(series.values - 1.0, 0.0),
        unit="g-truncated",
    )
