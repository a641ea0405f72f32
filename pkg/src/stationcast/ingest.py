"""Decoding of string-encoded surface observations.

Raw archives store each measurement as ``<signed fixed-width integer>,<quality digit>``,
e.g. ``+0130,1`` for 13.0 degC at quality level 1.  A :class:`VariableCodec`
fixes, per variable, the integer scale, the digit width, whether a sign is
carried, and the sentinel integer that marks a missing value.  Record lines
are one ISO-8601 UTC timestamp followed by the encoded fields in schema
order, all comma separated::

    2023-01-01T12:55:00,+0130,1,+0080,1,270,1,0030,1,10132,1

Decoding is byte-oriented ASCII; anything outside the grammar is reported
as :class:`~stationcast.errors.MalformedField` with the offending offset,
never a crash.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import BinaryIO, Iterable, Iterator, Sequence

from .errors import BadTimestamp, IoFailure, MalformedField, UnknownVariable, ValueParse


class Variable(enum.Enum):
    TEMPERATURE = "temperature"
    DEWPOINT = "dewpoint"
    WIND_ANGLE = "wind_angle"
    WIND_RATE = "wind_rate"
    SEA_LEVEL_PRESSURE = "sea_level_pressure"


#: fixed variable order used by every array in the toolkit
VARIABLE_ORDER = (
    Variable.TEMPERATURE,
    Variable.DEWPOINT,
    Variable.WIND_ANGLE,
    Variable.WIND_RATE,
    Variable.SEA_LEVEL_PRESSURE,
)

#: column names in the station CSV schema, same order
VARIABLE_COLUMNS = ("TMP", "DEW", "WND_ANGLE", "WND_RATE", "SLP")

N_VARIABLES = len(VARIABLE_ORDER)

#: quality codes kept by default; everything else becomes missing
DEFAULT_QUALITY_ACCEPT = frozenset({0, 1, 4, 5})


@dataclass(frozen=True)
class StationMeta:
    """Static description of one observing station."""

    station_id: str
    latitude: float
    longitude: float
    elevation: float | None = None

    def __post_init__(self):
        if not self.station_id:
            raise ValueError("station_id must be nonempty")
        if not (-90.0 <= self.latitude <= 90.0):
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude < 180.0):
            raise ValueError(f"longitude {self.longitude} outside [-180, 180)")


@dataclass(frozen=True)
class VariableCodec:
    """Fixed-width integer encoding of one variable.

    ``scale`` divides the encoded integer; ``field_width`` counts digits
    (sign excluded); ``missing_sentinel`` is the signed integer meaning
    "absent".  Decoding then re-encoding any non-missing grid value is the
    identity on the canonical encoded string.
    """

    variable: Variable
    scale: int
    field_width: int
    signed: bool
    missing_sentinel: int

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.field_width <= 0:
            raise ValueError("field_width must be > 0")


#: default five-variable schema (degC, degC, deg, m/s, hPa)
DEFAULT_SCHEMA = (
    VariableCodec(Variable.TEMPERATURE, scale=10, field_width=4, signed=True, missing_sentinel=9999),
    VariableCodec(Variable.DEWPOINT, scale=10, field_width=4, signed=True, missing_sentinel=9999),
    VariableCodec(Variable.WIND_ANGLE, scale=1, field_width=3, signed=False, missing_sentinel=999),
    VariableCodec(Variable.WIND_RATE, scale=10, field_width=4, signed=False, missing_sentinel=9999),
    VariableCodec(Variable.SEA_LEVEL_PRESSURE, scale=10, field_width=5, signed=False, missing_sentinel=99999),
)


@dataclass
class RawObservation:
    """One decoded reading: value in physical units plus quality metadata."""

    timestamp: datetime
    variable: Variable
    value: float
    quality: int
    is_missing: bool


@dataclass
class DecodedField:
    value: float
    quality: int
    is_missing: bool


def _parse_numeric(numeric: str, codec: VariableCodec, base_offset: int = 0) -> int:
    """Parse the integer part of an encoded field, enforcing the grammar."""
    if not numeric.isascii():
        bad = next(i for i, c in enumerate(numeric) if not c.isascii())
        raise MalformedField(f"non-ASCII byte in field at offset {base_offset + bad}",
                             offset=base_offset + bad)
    pos = 0
    sign = 1
    if codec.signed:
        if pos >= len(numeric) or numeric[pos] not in "+-":
            raise MalformedField(f"expected sign at offset {base_offset + pos}",
                                 offset=base_offset + pos)
        sign = -1 if numeric[pos] == "-" else 1
        pos += 1
    digits = numeric[pos:]
    if len(digits) != codec.field_width or not digits.isdigit():
        bad = pos + next((i for i, c in enumerate(digits) if not c.isdigit()), len(digits))
        raise MalformedField(
            f"expected {codec.field_width} digits at offset {base_offset + pos}",
            offset=base_offset + min(bad, len(numeric)))
    return sign * int(digits)


def decode_tokens(numeric: str, quality: str, codec: VariableCodec,
                  quality_accept: frozenset[int] = DEFAULT_QUALITY_ACCEPT,
                  base_offset: int = 0) -> DecodedField:
    """Decode the (numeric, quality) token pair of one field."""
    encoded_int = _parse_numeric(numeric, codec, base_offset)
    qoff = base_offset + len(numeric) + 1
    if len(quality) != 1 or not quality.isdigit():
        raise MalformedField(f"expected single quality digit at offset {qoff}", offset=qoff)
    q = int(quality)
    if encoded_int == codec.missing_sentinel or q not in quality_accept:
        return DecodedField(value=float("nan"), quality=q, is_missing=True)
    return DecodedField(value=encoded_int / codec.scale, quality=q, is_missing=False)


def decode_field(encoded: str, codec: VariableCodec,
                 quality_accept: frozenset[int] = DEFAULT_QUALITY_ACCEPT) -> DecodedField:
    """Decode one ``value,quality`` field string.

    Parameters
    ----------
    encoded : str
        e.g. ``"+0130,1"`` for a signed scale-10 codec.
    codec : VariableCodec
        Grammar for this variable.
    quality_accept : frozenset of int
        Quality codes kept; others mark the value missing.

    Returns
    -------
    DecodedField
        ``value`` is ``encoded_int / scale`` unless the sentinel or a
        rejected quality code makes it missing.
    """
    comma = encoded.find(",")
    if comma < 0:
        raise MalformedField(f"missing ',' separator in field at offset {len(encoded)}",
                             offset=len(encoded))
    return decode_tokens(encoded[:comma], encoded[comma + 1:], codec, quality_accept)


def encode_field(value: float, quality: int, codec: VariableCodec) -> str:
    """Canonical encoding of a grid value (inverse of :func:`decode_field`)."""
    n = round(value * codec.scale)
    digits = f"{abs(n):0{codec.field_width}d}"
    if len(digits) != codec.field_width:
        raise ValueError(f"value {value} does not fit in {codec.field_width} digits")
    if codec.signed:
        return ("-" if n < 0 else "+") + digits + f",{quality}"
    if n < 0:
        raise ValueError(f"negative value {value} for unsigned codec {codec.variable}")
    return digits + f",{quality}"


def encode_missing(codec: VariableCodec, quality: int = 9) -> str:
    sentinel = f"{codec.missing_sentinel:0{codec.field_width}d}"
    return ("+" + sentinel if codec.signed else sentinel) + f",{quality}"


def parse_record_line(line: str, schema: Sequence[VariableCodec] = DEFAULT_SCHEMA,
                      quality_accept: frozenset[int] = DEFAULT_QUALITY_ACCEPT,
                      ) -> tuple[datetime, list[RawObservation]]:
    """Parse one record line into per-variable observations.

    The line is ``<ISO-8601 UTC timestamp>,<field>,...`` with one encoded
    field per schema entry, so it splits on commas into ``1 + 2 * len(schema)``
    tokens.  Observations are returned in schema order, all sharing the
    parsed timestamp.
    """
    tokens = line.split(",")
    if len(tokens) != 1 + 2 * len(schema):
        have = (len(tokens) - 1) // 2
        raise MalformedField(
            f"record has {have} fields, schema expects {len(schema)} (missing index {have})",
            field_index=min(have, len(schema)))
    try:
        ts = datetime.fromisoformat(tokens[0])
    except ValueError as exc:
        raise BadTimestamp(f"bad timestamp {tokens[0]!r}: {exc}")
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    obs: list[RawObservation] = []
    offset = len(tokens[0]) + 1
    for i, codec in enumerate(schema):
        numeric, quality = tokens[1 + 2 * i], tokens[2 + 2 * i]
        try:
            dec = decode_tokens(numeric, quality, codec, quality_accept, base_offset=offset)
        except MalformedField as exc:
            raise MalformedField(f"field {i} ({codec.variable.value}): {exc}",
                                 field_index=i, **exc.detail)
        obs.append(RawObservation(timestamp=ts, variable=codec.variable,
                                  value=dec.value, quality=dec.quality,
                                  is_missing=dec.is_missing))
        offset += len(numeric) + len(quality) + 2
    return ts, obs


@dataclass
class ScanReport:
    """Line accounting for one scan; accepted + rejected == lines_read."""

    lines_read: int = 0
    accepted: int = 0
    rejected: int = 0
    reject_reasons: dict = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reject_reasons[reason] = self.reject_reasons.get(reason, 0) + 1

    def merge(self, other: "ScanReport") -> "ScanReport":
        merged = ScanReport(
            lines_read=self.lines_read + other.lines_read,
            accepted=self.accepted + other.accepted,
            rejected=self.rejected + other.rejected,
            reject_reasons=dict(self.reject_reasons),
        )
        for k, v in other.reject_reasons.items():
            merged.reject_reasons[k] = merged.reject_reasons.get(k, 0) + v
        return merged

    def to_json_dict(self) -> dict:
        return {"lines_read": self.lines_read, "accepted": self.accepted,
                "rejected": self.rejected, "reject_reasons": dict(self.reject_reasons)}


def scan_station_stream(stream: BinaryIO, schema: Sequence[VariableCodec] = DEFAULT_SCHEMA,
                        quality_accept: frozenset[int] = DEFAULT_QUALITY_ACCEPT,
                        report: ScanReport | None = None,
                        ) -> Iterator[tuple[datetime, list[RawObservation]]]:
    """Stream decoded records from one station file.

    Data errors are counted in ``report`` (never silently dropped, never
    raised); only genuine I/O problems raise :class:`IoFailure`.  Memory is
    constant in the number of lines.
    """
    if report is None:
        report = ScanReport()
    try:
        for raw in stream:
            line = raw.rstrip(b"\r\n")
            report.lines_read += 1
            if not line.strip():
                report.reject("blank")
                continue
            try:
                text = line.decode("ascii")
            except UnicodeDecodeError:
                report.reject("non_ascii")
                continue
            try:
                ts, obs = parse_record_line(text, schema, quality_accept)
            except MalformedField:
                report.reject("malformed_field")
                continue
            except BadTimestamp:
                report.reject("bad_timestamp")
                continue
            report.accepted += 1
            yield ts, obs
    except OSError as exc:
        raise IoFailure(f"read failed: {exc}")


def scan_archive(station_files: Iterable[tuple[StationMeta, BinaryIO]],
                 schema: Sequence[VariableCodec] = DEFAULT_SCHEMA,
                 quality_accept: frozenset[int] = DEFAULT_QUALITY_ACCEPT,
                 ) -> tuple[Iterator[tuple[StationMeta, Iterator]], ScanReport]:
    """Scan many station files; the shared report fills as streams are consumed.

    Per-station decoding is pure, so distinct stations may be consumed from
    separate threads with per-station reports merged afterwards; the shared
    report returned here assumes sequential consumption.
    """
    report = ScanReport()

    def gen():
        for meta, stream in station_files:
            yield meta, scan_station_stream(stream, schema, quality_accept, report)

    return gen(), report


# ---------------------------------------------------------------------------
# schema configuration and the raw-archive directory layout
# ---------------------------------------------------------------------------

_CODEC_KEYS = {"variable", "scale", "field_width", "signed", "missing_sentinel"}


def schema_from_config(entries: Sequence[dict] | None) -> tuple[VariableCodec, ...]:
    """Build a codec schema from run-config entries (``None`` = default)."""
    if entries is None:
        return DEFAULT_SCHEMA
    by_name = {v.value: v for v in Variable}
    out = []
    for e in entries:
        unknown = set(e) - _CODEC_KEYS
        if unknown:
            raise UnknownVariable(f"unknown codec keys {sorted(unknown)}")
        name = e.get("variable")
        if name not in by_name:
            raise UnknownVariable(f"unknown variable {name!r}")
        out.append(VariableCodec(by_name[name], scale=int(e["scale"]),
                                 field_width=int(e["field_width"]),
                                 signed=bool(e["signed"]),
                                 missing_sentinel=int(e["missing_sentinel"])))
    return tuple(out)


def load_station_manifest(path) -> list[StationMeta]:
    """Read the raw-archive ``stations.json`` (id, latitude, longitude[, elevation])."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read station manifest: {exc}")
    except json.JSONDecodeError as exc:
        raise ValueParse(f"bad JSON in {path}: {exc}")
    metas = []
    seen = set()
    for entry in doc.get("stations", []):
        meta = StationMeta(station_id=str(entry["id"]), latitude=float(entry["latitude"]),
                           longitude=float(entry["longitude"]),
                           elevation=entry.get("elevation"))
        if meta.station_id in seen:
            raise UnknownVariable(f"duplicate station id {meta.station_id}")
        seen.add(meta.station_id)
        metas.append(meta)
    return metas


def open_archive_dir(root, metas: Sequence[StationMeta]):
    """Yield (meta, open binary stream) for ``<root>/<station_id>.txt`` files."""
    import os
    for meta in metas:
        path = os.path.join(root, f"{meta.station_id}.txt")
        try:
            fh = open(path, "rb")
        except OSError as exc:
            raise IoFailure(f"cannot open {path}: {exc}")
        yield meta, fh
