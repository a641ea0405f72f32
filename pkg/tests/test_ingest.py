import io
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stationcast.errors import BadTimestamp, MalformedField
from stationcast.ingest import (DEFAULT_SCHEMA, ScanReport, StationMeta,
                                Variable, VariableCodec, decode_field,
                                encode_field, encode_missing,
                                parse_record_line, scan_archive,
                                scan_station_stream)

TEMP = DEFAULT_SCHEMA[0]

GOOD_LINE = "2023-01-01T12:55:00,+0130,1,+0080,1,270,1,0030,1,10132,1"


class TestDecodeField:
    def test_golden_temperature(self):
        dec = decode_field("+0130,1", TEMP)
        assert dec.value == 13.0
        assert dec.quality == 1
        assert not dec.is_missing

    def test_sentinel_is_missing(self):
        dec = decode_field("+9999,9", TEMP)
        assert dec.is_missing

    def test_negative_value_and_reencode(self):
        dec = decode_field("-0005,1", TEMP)
        assert dec.value == -0.5
        assert dec.quality == 1
        assert encode_field(dec.value, dec.quality, TEMP) == "-0005,1"

    def test_rejected_quality_becomes_missing(self):
        assert decode_field("+0130,3", TEMP).is_missing
        assert not decode_field("+0130,4", TEMP).is_missing

    def test_malformed_reports_offset(self):
        with pytest.raises(MalformedField) as exc:
            decode_field("+01X0,1", TEMP)
        assert exc.value.detail["offset"] == 3

    def test_missing_sign_for_signed_codec(self):
        with pytest.raises(MalformedField) as exc:
            decode_field("0130,1", TEMP)
        assert exc.value.detail["offset"] == 0

    def test_non_ascii_is_malformed(self):
        with pytest.raises(MalformedField):
            decode_field("+01°0,1", TEMP)


def canonical_encodings(codec: VariableCodec):
    limit = 10 ** codec.field_width - 1
    lo = -limit if codec.signed else 0
    return (st.integers(lo, limit)
            .filter(lambda n: n != codec.missing_sentinel)
            .flatmap(lambda n: st.integers(0, 9).map(
                lambda q: encode_field(n / codec.scale, q, codec))))


class TestRoundTrip:
    @given(canonical_encodings(TEMP))
    @settings(max_examples=300, deadline=None)
    def test_signed_round_trip(self, encoded):
        dec = decode_field(encoded, TEMP, quality_accept=frozenset(range(10)))
        assert not dec.is_missing
        assert encode_field(dec.value, dec.quality, TEMP) == encoded

    @given(canonical_encodings(DEFAULT_SCHEMA[4]))
    @settings(max_examples=300, deadline=None)
    def test_unsigned_round_trip(self, encoded):
        codec = DEFAULT_SCHEMA[4]
        dec = decode_field(encoded, codec, quality_accept=frozenset(range(10)))
        assert encode_field(dec.value, dec.quality, codec) == encoded

    def test_bulk_random_round_trip(self):
        rng = np.random.Generator(np.random.PCG64(5))
        for codec in DEFAULT_SCHEMA:
            limit = 10 ** codec.field_width - 1
            lo = -limit if codec.signed else 0
            for _ in range(2000):
                n = int(rng.integers(lo, limit + 1))
                if n == codec.missing_sentinel:
                    continue
                q = int(rng.integers(0, 10))
                s = encode_field(n / codec.scale, q, codec)
                dec = decode_field(s, codec, quality_accept=frozenset(range(10)))
                assert encode_field(dec.value, dec.quality, codec) == s


class TestParseRecordLine:
    def test_golden_line(self):
        ts, obs = parse_record_line(GOOD_LINE)
        assert ts == datetime(2023, 1, 1, 12, 55, tzinfo=timezone.utc)
        assert [o.variable for o in obs] == list(v.variable for v in DEFAULT_SCHEMA)
        values = [o.value for o in obs]
        assert values == [13.0, 8.0, 270.0, 3.0, 1013.2]
        assert all(o.timestamp == ts for o in obs)

    def test_missing_dewpoint_leaves_others_intact(self):
        line = "2023-01-01T12:55:00,+0130,1,+9999,9,270,1,0030,1,10132,1"
        _, obs = parse_record_line(line)
        assert obs[1].is_missing
        assert not obs[0].is_missing and not obs[2].is_missing

    def test_arity_error_names_index(self):
        line = "2023-01-01T12:55:00,+0130,1,+0080,1,270,1,0030,1"
        with pytest.raises(MalformedField) as exc:
            parse_record_line(line)
        assert exc.value.detail["field_index"] == 4

    def test_bad_timestamp(self):
        with pytest.raises(BadTimestamp):
            parse_record_line("not-a-time,+0130,1,+0080,1,270,1,0030,1,10132,1")

    def test_field_error_carries_index(self):
        line = "2023-01-01T12:55:00,+0130,1,+0080,1,9x9,1,0030,1,10132,1"
        with pytest.raises(MalformedField) as exc:
            parse_record_line(line)
        assert exc.value.detail["field_index"] == 2


def _meta():
    return StationMeta("TST0001", latitude=10.0, longitude=20.0)


class TestScan:
    def test_empty_stream(self):
        report = ScanReport()
        out = list(scan_station_stream(io.BytesIO(b""), report=report))
        assert out == []
        assert report.lines_read == 0
        assert report.accepted == report.rejected == 0

    def test_counts_conserve_with_bad_lines(self):
        data = (GOOD_LINE + "\n") * 3 + "garbage line\n"
        report = ScanReport()
        out = list(scan_station_stream(io.BytesIO(data.encode()), report=report))
        assert len(out) == 3
        assert all(len(obs) == 5 for _, obs in out)
        assert report.rejected == 1
        assert report.accepted + report.rejected == report.lines_read == 4

    def test_non_ascii_rejected_not_crash(self):
        data = GOOD_LINE.encode() + b"\n" + "2023-01-01T13:55:00,+01°0,1,+0080,1,270,1,0030,1,10132,1".encode("utf-8") + b"\n"
        report = ScanReport()
        out = list(scan_station_stream(io.BytesIO(data), report=report))
        assert len(out) == 1
        assert report.reject_reasons.get("non_ascii") == 1

    def test_archive_merges_reports(self):
        files = [(_meta(), io.BytesIO((GOOD_LINE + "\n").encode())),
                 (StationMeta("TST0002", 0.0, 0.0), io.BytesIO(b"junk\n"))]
        streams, report = scan_archive(files)
        for _, obs_stream in streams:
            list(obs_stream)
        assert report.lines_read == 2
        assert report.accepted == 1
        assert report.rejected == 1

    def test_report_merge_is_associative(self):
        a = ScanReport(lines_read=3, accepted=2, rejected=1, reject_reasons={"x": 1})
        b = ScanReport(lines_read=5, accepted=5, rejected=0)
        c = ScanReport(lines_read=1, accepted=0, rejected=1, reject_reasons={"x": 1})
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        assert left.to_json_dict() == right.to_json_dict()

    def test_million_line_conservation(self):
        # generated file with a known corruption count: every 1000th line bad
        n = 1_000_000
        bad_every = 1000
        chunks = []
        base = GOOD_LINE.encode()
        for i in range(0, n, bad_every):
            block = min(bad_every, n - i)
            chunks.append(b"\n".join([base] * (block - 1) + [b"corrupted,record"]))
        data = b"\n".join(chunks) + b"\n"
        assert data.count(b"\n") == n
        report = ScanReport()
        count = 0
        for _ in scan_station_stream(io.BytesIO(data), report=report):
            count += 1
        assert report.lines_read == n
        assert report.accepted + report.rejected == n
        assert report.rejected == n // bad_every
        assert count == report.accepted
