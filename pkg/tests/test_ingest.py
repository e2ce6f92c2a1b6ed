import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collarlab import ingest
from collarlab.errors import (
    EmptyLog,
    MalformedRecord,
    MixedDogIds,
    NonMonotonicAfterRepair,
)

HOUR_MS = 3600 * 1000


def make_csv(rows):
    return (ingest.CSV_HEADER + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n").encode()


def make_session(t0_ms, duration_s, rate_hz=50.0, dog_id="d1", fill=7):
    n = int(duration_s * rate_hz)
    ts = t0_ms + (np.arange(n) * 1000 / rate_hz).astype(np.int64)
    ch = np.full((n, 6), fill, dtype=np.int16)
    return ingest.SensorSession(dog_id, ts, ch, nominal_rate_hz=rate_hz)


class TestParseCsv:
    def test_minimal_three_rows(self):
        src = make_csv([[0, 1, 2, 3, 4, 5, 6], [20, 1, 2, 3, 4, 5, 6], [40, 1, 2, 3, 4, 5, 6]])
        s = ingest.parse_sensor_log(src, "csv")
        assert len(s) == 3
        assert s.nominal_rate_hz == 50.0
        assert list(s.timestamps_ms) == [0, 20, 40]

    def test_duplicate_timestamp_keeps_first(self):
        src = make_csv([
            [0, 1, 0, 0, 0, 0, 0],
            [20, 2, 0, 0, 0, 0, 0],
            [20, 9, 0, 0, 0, 0, 0],
            [40, 3, 0, 0, 0, 0, 0],
        ])
        s = ingest.parse_sensor_log(src, "csv")
        assert len(s) == 3
        assert s.channels[1, 0] == 2  # first occurrence won

    def test_malformed_line_located(self):
        src = (ingest.CSV_HEADER + "\n0,1,2,3,4,5,6\nnot,a,row\n").encode()
        with pytest.raises(MalformedRecord) as e:
            ingest.parse_sensor_log(src, "csv")
        assert e.value.line == 3

    def test_bad_header(self):
        with pytest.raises(MalformedRecord):
            ingest.parse_sensor_log(b"time,ax\n1,2\n", "csv")

    def test_empty_log(self):
        with pytest.raises(EmptyLog):
            ingest.parse_sensor_log((ingest.CSV_HEADER + "\n").encode(), "csv")

    def test_out_of_range_channel(self):
        with pytest.raises(MalformedRecord):
            ingest.parse_sensor_log(make_csv([[0, 99999, 0, 0, 0, 0, 0]]), "csv")

    def test_mostly_unordered_rejected(self):
        rows = [[t, 0, 0, 0, 0, 0, 0] for t in range(100, 0, -1)]
        with pytest.raises(NonMonotonicAfterRepair):
            ingest.parse_sensor_log(make_csv(rows), "csv")

    def test_small_disorder_repaired(self):
        ts = list(range(0, 20000, 20))
        ts[500], ts[501] = ts[501], ts[500]  # one swapped pair < 1%
        s = ingest.parse_sensor_log(make_csv([[t, 0, 0, 0, 0, 0, 0] for t in ts]), "csv")
        assert np.all(np.diff(s.timestamps_ms) > 0)


class TestBinaryRoundTrip:
    def test_binary_round_trip_identical(self):
        rng = np.random.default_rng(7)
        n = 9000
        ts = (np.arange(n) * 20).astype(np.int64)
        ch = rng.integers(-32768, 32767, size=(n, 6), dtype=np.int16)
        session = ingest.SensorSession("dog_a", ts, ch, 50.0)
        blob = ingest.serialize_binary(session)
        parsed = ingest.parse_sensor_log(blob, "binary")
        assert parsed.dog_id == "dog_a"
        assert parsed.nominal_rate_hz == 50.0
        # 9000 records at 50 Hz span 180 s
        assert (parsed.timestamps_ms[-1] - parsed.timestamps_ms[0]) == (n - 1) * 20
        assert ingest.serialize_binary(parsed) == blob

    def test_csv_round_trip(self):
        s = make_session(0, 10)
        parsed = ingest.parse_sensor_log(ingest.serialize_csv(s), "csv", dog_id="d1")
        assert np.array_equal(parsed.timestamps_ms, s.timestamps_ms)
        assert np.array_equal(parsed.channels, s.channels)

    def test_bad_magic(self):
        with pytest.raises(MalformedRecord):
            ingest.parse_sensor_log(b"XXXX" + bytes(40), "binary")

    def test_truncated_body(self):
        s = make_session(0, 1)
        blob = ingest.serialize_binary(s)
        with pytest.raises(MalformedRecord):
            ingest.parse_sensor_log(blob[:-3], "binary")


@settings(max_examples=150, deadline=None)
@given(st.binary(min_size=0, max_size=400))
def test_parser_totality_binary(blob):
    """Fuzzed input either parses or raises a located, typed error."""
    try:
        ingest.parse_sensor_log(blob, "binary")
    except (MalformedRecord, EmptyLog, NonMonotonicAfterRepair):
        pass


@settings(max_examples=150, deadline=None)
@given(st.text(max_size=300))
def test_parser_totality_csv(text):
    try:
        ingest.parse_sensor_log(text.encode("utf-8", errors="replace"), "csv")
    except (MalformedRecord, EmptyLog, NonMonotonicAfterRepair):
        pass


class TestAssembleDogDays:
    def test_full_day_coverage_one(self):
        s = make_session(0, 18 * 3600)
        days = ingest.assemble_dog_days([s])
        assert len(days) == 1
        assert days[0].coverage_fraction == pytest.approx(1.0)

    def test_evening_samples_dropped(self):
        day = make_session(0, 18 * 3600)
        evening = make_session(19 * HOUR_MS, 2 * 3600)
        days = ingest.assemble_dog_days([day, evening])
        assert len(days) == 1
        assert days[0].n_samples == len(day)

    def test_two_sessions_partial_coverage(self):
        a = make_session(0, 6 * 3600)
        b = make_session(12 * HOUR_MS, 6 * 3600)
        days = ingest.assemble_dog_days([a, b])
        assert len(days) == 1
        assert days[0].coverage_fraction == pytest.approx(12.0 / 18.0, abs=1e-9)

    def test_mixed_dogs_rejected(self):
        with pytest.raises(MixedDogIds):
            ingest.assemble_dog_days([make_session(0, 10, dog_id="a"), make_session(0, 10, dog_id="b")])

    def test_tz_offset_shifts_day(self):
        # 23:00 UTC with +120 min offset lands at 01:00 local, inside the span
        s = make_session(23 * HOUR_MS, 3600)
        assert ingest.assemble_dog_days([s], tz_offset_min=0) == []
        days = ingest.assemble_dog_days([s], tz_offset_min=120)
        assert len(days) == 1
        assert days[0].date.isoformat() == "1970-01-02"

    def test_idempotent(self):
        a = make_session(0, 3600)
        b = make_session(2 * HOUR_MS, 3600)
        days1 = ingest.assemble_dog_days([a, b])
        segments = [seg for d in days1 for seg in d.segments]
        days2 = ingest.assemble_dog_days(segments)
        assert len(days1) == len(days2)
        for d1, d2 in zip(days1, days2):
            assert d1.date == d2.date
            assert d1.coverage_fraction == pytest.approx(d2.coverage_fraction)
            t1, c1 = d1.concatenated()
            t2, c2 = d2.concatenated()
            assert np.array_equal(t1, t2)
            assert np.array_equal(c1, c2)

    def test_sample_conservation(self):
        rng = np.random.default_rng(3)
        sessions = [
            make_session(int(rng.integers(0, 3 * 86400)) * 1000, int(rng.integers(60, 7200)))
            for _ in range(8)
        ]
        days = ingest.assemble_dog_days(sessions)
        in_span = 0
        for s in sessions:
            local = s.timestamps_ms % (86400 * 1000)
            in_span += int((local < 18 * HOUR_MS).sum())
        assert sum(d.n_samples for d in days) == in_span


class TestQc:
    def test_full_day_passes(self):
        day = ingest.assemble_dog_days([make_session(0, 18 * 3600)])[0]
        rep = ingest.qc_session(day)
        assert rep.verdict == "pass"
        assert rep.gap_list == []

    def test_four_hour_gap_fails_coverage(self):
        a = make_session(0, 7 * 3600)
        b = make_session(11 * HOUR_MS, 7 * 3600)
        day = ingest.assemble_dog_days([a, b])[0]
        rep = ingest.qc_session(day, min_coverage=0.8)
        assert day.coverage_fraction == pytest.approx(14.0 / 18.0, abs=1e-9)
        assert rep.verdict == "fail"
        assert len(rep.gap_list) == 1

    def test_clipping_counted_but_not_gating(self):
        s = make_session(0, 18 * 3600)
        s.channels[:100, 0] = 32767
        day = ingest.assemble_dog_days([s])[0]
        rep = ingest.qc_session(day)
        assert rep.clipped_sample_count == 100
        assert rep.verdict == "pass"

    def test_small_gap_warns(self):
        a = make_session(0, 9 * 3600)
        b = make_session(int(9.1 * HOUR_MS), int(8.9 * 3600))
        day = ingest.assemble_dog_days([a, b])[0]
        rep = ingest.qc_session(day, min_coverage=0.8)
        assert rep.verdict == "warn"
        assert len(rep.gap_list) == 1
