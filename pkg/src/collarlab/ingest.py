"""Raw sensor log parsing, dog-day assembly, and quality control.

Sessions keep raw counts as int16 plus per-session scale factors; unit
conversion happens downstream so parsing stays lossless and round-trippable.
"""

from __future__ import annotations

import datetime
import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from .errors import EmptyLog, MalformedRecord, MixedDogIds, NonMonotonicAfterRepair

logger = logging.getLogger(__name__)

CSV_HEADER = "timestamp_ms,ax,ay,az,gx,gy,gz"
BINARY_MAGIC = b"PKLG"
BINARY_VERSION = 1
RECORD_STRUCT = struct.Struct("<Q6h")  # u64 timestamp_ms + 6x i16 channels

DEFAULT_ACCEL_SCALE = 1.0 / 4096.0  # g per count (+-8 g on int16)
DEFAULT_GYRO_SCALE = 1.0 / 16.4     # dps per count (+-2000 dps on int16)

CAPTURE_SPAN_MS = 18 * 3600 * 1000  # device records 00:00-18:00 local
DAY_MS = 24 * 3600 * 1000
GAP_THRESHOLD_S = 2.0

INT16_MIN, INT16_MAX = -32768, 32767


class SensorRecord(NamedTuple):
    timestamp_ms: int
    ax: int
    ay: int
    az: int
    gx: int
    gy: int
    gz: int


@dataclass
class SensorSession:
    """One contiguous recording: timestamps (ms) plus six int16 channels."""

    dog_id: str
    timestamps_ms: np.ndarray          # int64, strictly increasing
    channels: np.ndarray               # int16, shape (n, 6): ax ay az gx gy gz
    nominal_rate_hz: float = 50.0
    accel_scale: float = DEFAULT_ACCEL_SCALE
    gyro_scale: float = DEFAULT_GYRO_SCALE

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.int16)
        if len(self.timestamps_ms) == 0:
            raise EmptyLog("session has no records")
        if self.channels.shape != (len(self.timestamps_ms), 6):
            raise MalformedRecord("channel array shape does not match timestamps", line=0)
        if len(self.timestamps_ms) > 1 and not np.all(np.diff(self.timestamps_ms) > 0):
            raise NonMonotonicAfterRepair("timestamps not strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps_ms)

    def iter_records(self) -> Iterator[SensorRecord]:
        for i in range(len(self)):
            yield SensorRecord(int(self.timestamps_ms[i]), *(int(v) for v in self.channels[i]))

    def accel_g(self) -> np.ndarray:
        """(n, 3) accelerometer values in g."""
        return self.channels[:, :3].astype(np.float64) * self.accel_scale

    def gyro_dps(self) -> np.ndarray:
        """(n, 3) gyroscope values in degrees/second."""
        return self.channels[:, 3:].astype(np.float64) * self.gyro_scale

    def median_interval_s(self) -> float:
        if len(self) < 2:
            return 1.0 / self.nominal_rate_hz
        return float(np.median(np.diff(self.timestamps_ms))) / 1000.0

    def slice(self, start: int, stop: int) -> "SensorSession":
        return SensorSession(
            dog_id=self.dog_id,
            timestamps_ms=self.timestamps_ms[start:stop].copy(),
            channels=self.channels[start:stop].copy(),
            nominal_rate_hz=self.nominal_rate_hz,
            accel_scale=self.accel_scale,
            gyro_scale=self.gyro_scale,
        )


@dataclass
class DogDay:
    """All in-span samples for one dog on one local calendar date."""

    dog_id: str
    date: datetime.date
    segments: list[SensorSession]
    coverage_fraction: float
    tz_offset_min: int = 0

    @property
    def n_samples(self) -> int:
        return sum(len(s) for s in self.segments)

    def concatenated(self) -> tuple[np.ndarray, np.ndarray]:
        """(timestamps_ms, channels) pooled over segments, time-sorted."""
        ts = np.concatenate([s.timestamps_ms for s in self.segments])
        ch = np.concatenate([s.channels for s in self.segments])
        order = np.argsort(ts, kind="stable")
        return ts[order], ch[order]

    def local_ms_in_day(self, timestamps_ms: np.ndarray) -> np.ndarray:
        """Milliseconds since local midnight for the given epoch timestamps."""
        return (timestamps_ms + self.tz_offset_min * 60_000) % DAY_MS

    @property
    def nominal_rate_hz(self) -> float:
        return self.segments[0].nominal_rate_hz

    @property
    def accel_scale(self) -> float:
        return self.segments[0].accel_scale

    @property
    def gyro_scale(self) -> float:
        return self.segments[0].gyro_scale


@dataclass
class QcReport:
    dog_id: str
    date: datetime.date
    coverage_fraction: float
    gap_list: list[tuple[int, int]] = field(default_factory=list)  # (start_ms, end_ms)
    rate_drift_ppm: float = 0.0
    clipped_sample_count: int = 0
    verdict: str = "pass"

    def to_dict(self) -> dict:
        return {
            "dog_id": self.dog_id,
            "date": self.date.isoformat(),
            "coverage_fraction": self.coverage_fraction,
            "gap_list": [[int(a), int(b)] for a, b in self.gap_list],
            "rate_drift_ppm": self.rate_drift_ppm,
            "clipped_sample_count": self.clipped_sample_count,
            "verdict": self.verdict,
        }


# --------------------------------------------------------------------------
# parsing


def parse_sensor_log(
    source: bytes | BinaryIO,
    format: str,
    *,
    dog_id: str = "unknown",
    nominal_rate_hz: float = 50.0,
    accel_scale: float = DEFAULT_ACCEL_SCALE,
    gyro_scale: float = DEFAULT_GYRO_SCALE,
) -> SensorSession:
    """Parse a CSV or binary log into a SensorSession.

    Rows are sorted by timestamp; duplicate timestamps keep the first
    occurrence. Raises NonMonotonicAfterRepair when more than 1% of rows
    arrived out of order. For the binary format the header metadata wins
    over the keyword overrides.
    """
    data = source.read() if hasattr(source, "read") else source
    if format == "csv":
        ts, ch = _parse_csv(data)
    elif format == "binary":
        dog_id, nominal_rate_hz, accel_scale, gyro_scale, ts, ch = _parse_binary(data)
    else:
        raise ValueError(f"unknown log format: {format!r}")

    if len(ts) == 0:
        raise EmptyLog("log contains no records")

    out_of_order = int(np.sum(ts[1:] < np.maximum.accumulate(ts)[:-1])) if len(ts) > 1 else 0
    if out_of_order > 0.01 * len(ts):
        raise NonMonotonicAfterRepair(
            f"{out_of_order} of {len(ts)} rows out of order (>1%)"
        )

    order = np.argsort(ts, kind="stable")
    ts, ch = ts[order], ch[order]
    keep = np.ones(len(ts), dtype=bool)
    keep[1:] = ts[1:] != ts[:-1]
    n_dup = int(len(ts) - keep.sum())
    if n_dup:
        logger.warning("%s: dropped %d duplicate-timestamp rows", dog_id, n_dup)
        ts, ch = ts[keep], ch[keep]

    return SensorSession(
        dog_id=dog_id,
        timestamps_ms=ts,
        channels=ch,
        nominal_rate_hz=nominal_rate_hz,
        accel_scale=accel_scale,
        gyro_scale=gyro_scale,
    )


def _parse_csv(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedRecord(f"not valid UTF-8: {e}", offset=e.start) from None
    lines = text.split("\n")
    if not lines or lines[0].strip() != CSV_HEADER:
        raise MalformedRecord(f"bad or missing header (expected {CSV_HEADER!r})", line=1)

    ts_list: list[int] = []
    rows: list[tuple[int, ...]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise MalformedRecord(f"expected 7 fields, got {len(parts)}", line=lineno)
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise MalformedRecord(f"non-integer field in {line!r}", line=lineno) from None
        if values[0] < 0:
            raise MalformedRecord("negative timestamp", line=lineno)
        for v in values[1:]:
            if not (INT16_MIN <= v <= INT16_MAX):
                raise MalformedRecord(f"channel value {v} outside int16 range", line=lineno)
        ts_list.append(values[0])
        rows.append(tuple(values[1:]))

    ts = np.asarray(ts_list, dtype=np.int64)
    ch = np.asarray(rows, dtype=np.int16).reshape(len(ts_list), 6)
    return ts, ch


def _parse_binary(data: bytes):
    if len(data) < 5 or data[:4] != BINARY_MAGIC:
        raise MalformedRecord("bad magic (expected PKLG)", offset=0)
    if data[4] != BINARY_VERSION:
        raise MalformedRecord(f"unsupported version {data[4]}", offset=4)
    pos = 5
    try:
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        dog_id = data[pos:pos + id_len].decode("utf-8")
        pos += id_len
        nominal_rate_hz, accel_scale, gyro_scale = struct.unpack_from("<3d", data, pos)
        pos += 24
    except (struct.error, UnicodeDecodeError) as e:
        raise MalformedRecord(f"truncated or invalid header: {e}", offset=pos) from None

    body = data[pos:]
    if len(body) % RECORD_STRUCT.size != 0:
        raise MalformedRecord(
            f"body length {len(body)} not a multiple of {RECORD_STRUCT.size}",
            offset=pos + len(body) - len(body) % RECORD_STRUCT.size,
        )
    n = len(body) // RECORD_STRUCT.size
    raw = np.frombuffer(body, dtype=np.dtype([("ts", "<u8"), ("ch", "<i2", (6,))]))
    ts = raw["ts"].astype(np.int64)
    if np.any(raw["ts"] > np.iinfo(np.int64).max):
        raise MalformedRecord("timestamp overflows int64", offset=pos)
    ch = raw["ch"].astype(np.int16).reshape(n, 6)
    return dog_id, nominal_rate_hz, accel_scale, gyro_scale, ts, ch


def serialize_binary(session: SensorSession) -> bytes:
    """Inverse of parse_sensor_log(format='binary'); byte-exact round trip."""
    dog_bytes = session.dog_id.encode("utf-8")
    header = (
        BINARY_MAGIC
        + bytes([BINARY_VERSION])
        + struct.pack("<H", len(dog_bytes))
        + dog_bytes
        + struct.pack("<3d", session.nominal_rate_hz, session.accel_scale, session.gyro_scale)
    )
    body = np.empty(len(session), dtype=np.dtype([("ts", "<u8"), ("ch", "<i2", (6,))]))
    body["ts"] = session.timestamps_ms.astype(np.uint64)
    body["ch"] = session.channels
    return header + body.tobytes()


def serialize_csv(session: SensorSession) -> bytes:
    lines = [CSV_HEADER]
    ts = session.timestamps_ms
    ch = session.channels
    for i in range(len(session)):
        lines.append(f"{ts[i]},{ch[i,0]},{ch[i,1]},{ch[i,2]},{ch[i,3]},{ch[i,4]},{ch[i,5]}")
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# dog-day assembly


def assemble_dog_days(sessions: Iterable[SensorSession], tz_offset_min: int = 0) -> list[DogDay]:
    """Split sessions into per-local-date DogDays covering [00:00, 18:00).

    Samples outside the capture span are dropped; days with zero in-span
    samples are omitted. coverage_fraction counts one nominal sample period
    per sample against the 64800 s span.
    """
    sessions = list(sessions)
    if not sessions:
        return []
    dog_ids = {s.dog_id for s in sessions}
    if len(dog_ids) > 1:
        raise MixedDogIds(f"sessions span multiple dogs: {sorted(dog_ids)}")

    by_date: dict[int, list[SensorSession]] = {}
    for session in sessions:
        local = session.timestamps_ms + tz_offset_min * 60_000
        day_idx = local // DAY_MS
        in_span = (local % DAY_MS) < CAPTURE_SPAN_MS
        if not np.any(in_span):
            continue
        for day in np.unique(day_idx[in_span]):
            mask = in_span & (day_idx == day)
            idx = np.flatnonzero(mask)
            # slices are contiguous because timestamps increase within a session
            seg = session.slice(int(idx[0]), int(idx[-1]) + 1)
            if len(seg) != len(idx):  # non-contiguous mask (out-of-span hole)
                seg = SensorSession(
                    dog_id=session.dog_id,
                    timestamps_ms=session.timestamps_ms[idx],
                    channels=session.channels[idx],
                    nominal_rate_hz=session.nominal_rate_hz,
                    accel_scale=session.accel_scale,
                    gyro_scale=session.gyro_scale,
                )
            by_date.setdefault(int(day), []).append(seg)

    days = []
    for day_idx in sorted(by_date):
        segs = sorted(by_date[day_idx], key=lambda s: int(s.timestamps_ms[0]))
        n = sum(len(s) for s in segs)
        rate = segs[0].nominal_rate_hz
        coverage = min(1.0, (n / rate) / (CAPTURE_SPAN_MS / 1000.0))
        days.append(
            DogDay(
                dog_id=segs[0].dog_id,
                date=datetime.date(1970, 1, 1) + datetime.timedelta(days=day_idx),
                segments=segs,
                coverage_fraction=coverage,
                tz_offset_min=tz_offset_min,
            )
        )
    return days


def qc_session(day: DogDay, min_coverage: float = 0.8) -> QcReport:
    """QC one DogDay. Never raises: degenerate days simply fail."""
    ts, ch = day.concatenated()
    gaps: list[tuple[int, int]] = []
    if len(ts) > 1:
        dt = np.diff(ts)
        for i in np.flatnonzero(dt > GAP_THRESHOLD_S * 1000):
            gaps.append((int(ts[i]), int(ts[i + 1])))

    nominal = day.nominal_rate_hz
    if len(ts) > 1:
        med = float(np.median(np.diff(ts))) / 1000.0
        observed = 1.0 / med if med > 0 else nominal
        drift_ppm = (observed - nominal) / nominal * 1e6
    else:
        drift_ppm = 0.0

    clipped = int(np.sum((ch == INT16_MAX) | (ch == INT16_MIN)))

    if day.coverage_fraction < min_coverage:
        verdict = "fail"
    elif gaps or abs(drift_ppm) > 20_000:
        verdict = "warn"
    else:
        verdict = "pass"

    return QcReport(
        dog_id=day.dog_id,
        date=day.date,
        coverage_fraction=day.coverage_fraction,
        gap_list=gaps,
        rate_drift_ppm=drift_ppm,
        clipped_sample_count=clipped,
        verdict=verdict,
    )
