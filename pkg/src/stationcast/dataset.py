"""Station CSV store, climate statistics, splits, and training windows.

One CSV per station, columns exactly::

    DATE,LONGITUDE,LATITUDE,TMP,DEW,WND_ANGLE,WND_RATE,SLP,MASK,TIME_DIFF

DATE is ISO-8601 UTC on the hour; MASK is five semicolon-joined 0/1 digits
and TIME_DIFF five semicolon-joined signed minute offsets, both in the
fixed variable order (TMP, DEW, WND_ANGLE, WND_RATE, SLP).  Floats are
written with ``repr`` so read after write is bit-identical.

A catalog is a directory of such files plus ``manifest.json`` naming the
stations and the shared hourly grid.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterator, Sequence

import numpy as np

from .errors import (EmptyTrainingSplit, IoFailure, SchemaMismatch,
                     SplitTooShort, ValueParse)
from .ingest import N_VARIABLES, StationMeta, VARIABLE_COLUMNS
from .qc import EPOCH, StationSeries, from_epoch_hours, to_epoch_hours

CSV_HEADER = ("DATE", "LONGITUDE", "LATITUDE") + VARIABLE_COLUMNS + ("MASK", "TIME_DIFF")

#: percentile levels: lower tail then upper tail, in percent
LOWER_PERCENTILES = (0.5, 2.0, 5.0, 10.0)
UPPER_PERCENTILES = (90.0, 95.0, 98.0, 99.5)

STD_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# station CSV
# ---------------------------------------------------------------------------


def write_station_csv(series: StationSeries, path) -> None:
    """Write a complete (post-pipeline) series in the standard schema."""
    meta = series.meta
    lon, lat = repr(float(meta.longitude)), repr(float(meta.latitude))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        start_hour = series.start_epoch_hour
        for t in range(series.length):
            stamp = from_epoch_hours(start_hour + t).strftime("%Y-%m-%dT%H:%M:%S")
            vals = ",".join(repr(float(v)) for v in series.values[t])
            mask = ";".join("1" if m else "0" for m in series.mask[t])
            tdiff = ";".join(str(int(d)) for d in series.time_diff[t])
            fh.write(f"{stamp},{lon},{lat},{vals},{mask},{tdiff}\n")


def read_station_csv(path, station_id: str | None = None) -> StationSeries:
    """Read a station CSV; inverse of :func:`write_station_csv`."""
    try:
        fh = open(path, "r", encoding="ascii", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}")
    with fh:
        header = fh.readline().rstrip("\n").split(",")
        if tuple(header) != CSV_HEADER:
            for i, (got, want) in enumerate(zip(header, CSV_HEADER)):
                if got != want:
                    raise SchemaMismatch(
                        f"column {i} is {got!r}, expected {want!r}", column=i)
            raise SchemaMismatch(
                f"header has {len(header)} columns, expected {len(CSV_HEADER)}",
                column=min(len(header), len(CSV_HEADER)))
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(CSV_HEADER):
                raise SchemaMismatch(
                    f"line {lineno}: {len(parts)} columns, expected {len(CSV_HEADER)}",
                    line=lineno)
            rows.append(parts)
    if not rows:
        raise SchemaMismatch("station file has no data rows")

    n = len(rows)
    values = np.empty((n, N_VARIABLES))
    mask = np.empty((n, N_VARIABLES), dtype=bool)
    tdiff = np.empty((n, N_VARIABLES), dtype=np.int32)
    hours = np.empty(n, dtype=np.int64)
    lon = lat = None
    for i, parts in enumerate(rows):
        try:
            ts = datetime.fromisoformat(parts[0]).replace(tzinfo=timezone.utc)
            hours[i] = to_epoch_hours(ts)
            lon = float(parts[1])
            lat = float(parts[2])
            for j in range(N_VARIABLES):
                values[i, j] = float(parts[3 + j])
            ms = parts[3 + N_VARIABLES].split(";")
            ds = parts[4 + N_VARIABLES].split(";")
            if len(ms) != N_VARIABLES or len(ds) != N_VARIABLES:
                raise ValueError("MASK/TIME_DIFF arity")
            mask[i] = [c == "1" for c in ms]
            tdiff[i] = [int(d) for d in ds]
        except ValueError as exc:
            raise ValueParse(f"line {i + 2}: {exc}", line=i + 2)
    if np.any(np.diff(hours) != 1):
        raise SchemaMismatch("rows are not consecutive hours")
    meta = StationMeta(station_id=station_id or os.path.splitext(os.path.basename(path))[0],
                       latitude=lat, longitude=lon)
    return StationSeries(meta=meta, start=from_epoch_hours(hours[0]),
                         values=values, mask=mask, time_diff=tdiff)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


@dataclass
class DatasetCatalog:
    """A directory of station CSVs sharing one hourly grid."""

    root: str
    stations: list[StationMeta]
    start_epoch_hour: int
    length: int
    stats_preset: str | None = None

    @property
    def start(self) -> datetime:
        return from_epoch_hours(self.start_epoch_hour)

    def station_path(self, station_id: str) -> str:
        return os.path.join(self.root, f"{station_id}.csv")

    def read_station(self, station_id: str) -> StationSeries:
        return read_station_csv(self.station_path(station_id), station_id)

    def load_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Materialize (N, T, V) values and masks for all stations."""
        n = len(self.stations)
        values = np.empty((n, self.length, N_VARIABLES))
        masks = np.empty((n, self.length, N_VARIABLES), dtype=bool)
        for i, meta in enumerate(self.stations):
            s = self.read_station(meta.station_id)
            if s.start_epoch_hour != self.start_epoch_hour or s.length != self.length:
                raise SchemaMismatch(
                    f"station {meta.station_id} grid differs from catalog grid")
            values[i] = s.values
            masks[i] = s.mask
        return values, masks

    def geo(self) -> np.ndarray:
        """(N, 2) array of (longitude, latitude) in degrees."""
        return np.array([[m.longitude, m.latitude] for m in self.stations])

    def save_manifest(self) -> None:
        doc = {
            "schema_version": 1,
            "start": self.start.strftime("%Y-%m-%dT%H:%M:%S"),
            "length_hours": self.length,
            "variables": list(VARIABLE_COLUMNS),
            "stats_preset": self.stats_preset,
            "stations": [
                {"id": m.station_id, "latitude": m.latitude,
                 "longitude": m.longitude, "elevation": m.elevation}
                for m in self.stations
            ],
        }
        with open(os.path.join(self.root, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, root) -> "DatasetCatalog":
        path = os.path.join(root, "manifest.json")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ValueParse(f"bad JSON in {path}: {exc}")
        if doc.get("variables") != list(VARIABLE_COLUMNS):
            raise SchemaMismatch(f"manifest variable order {doc.get('variables')} unsupported")
        stations = [StationMeta(station_id=str(s["id"]), latitude=float(s["latitude"]),
                                longitude=float(s["longitude"]), elevation=s.get("elevation"))
                    for s in doc["stations"]]
        start = datetime.fromisoformat(doc["start"]).replace(tzinfo=timezone.utc)
        return cls(root=str(root), stations=stations,
                   start_epoch_hour=to_epoch_hours(start),
                   length=int(doc["length_hours"]),
                   stats_preset=doc.get("stats_preset"))


def save_catalog(root, series_list: Sequence[StationSeries],
                 stats_preset: str | None = None) -> DatasetCatalog:
    os.makedirs(root, exist_ok=True)
    if not series_list:
        raise EmptyTrainingSplit("catalog has no stations")
    start = series_list[0].start_epoch_hour
    length = series_list[0].length
    for s in series_list:
        if s.start_epoch_hour != start or s.length != length:
            raise SchemaMismatch(f"station {s.meta.station_id} grid differs")
    catalog = DatasetCatalog(root=str(root), stations=[s.meta for s in series_list],
                             start_epoch_hour=start, length=length,
                             stats_preset=stats_preset)
    for s in series_list:
        write_station_csv(s, catalog.station_path(s.meta.station_id))
    catalog.save_manifest()
    return catalog


# ---------------------------------------------------------------------------
# statistics and standardization
# ---------------------------------------------------------------------------


@dataclass
class ClimateStats:
    """Pooled mean/std per variable plus per-station extreme thresholds.

    ``lower``/``upper`` map station_id -> (len(levels), V) arrays of
    nearest-rank percentiles at :data:`LOWER_PERCENTILES` /
    :data:`UPPER_PERCENTILES`.
    """

    mean: np.ndarray
    std: np.ndarray
    lower: dict[str, np.ndarray] = field(default_factory=dict)
    upper: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)

    def to_json_dict(self) -> dict:
        return {
            "mean": [repr(float(v)) for v in self.mean],
            "std": [repr(float(v)) for v in self.std],
            "lower_levels": list(LOWER_PERCENTILES),
            "upper_levels": list(UPPER_PERCENTILES),
            "lower": {k: [[repr(float(x)) for x in row] for row in v]
                      for k, v in self.lower.items()},
            "upper": {k: [[repr(float(x)) for x in row] for row in v]
                      for k, v in self.upper.items()},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ClimateStats":
        return cls(
            mean=np.array([float(v) for v in doc["mean"]]),
            std=np.array([float(v) for v in doc["std"]]),
            lower={k: np.array([[float(x) for x in row] for row in v])
                   for k, v in doc.get("lower", {}).items()},
            upper={k: np.array([[float(x) for x in row] for row in v])
                   for k, v in doc.get("upper", {}).items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ClimateStats":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


#: pooled decadal statistics for a global five-variable station network,
#: usable as a fixed standardization preset instead of recomputing
GLOBAL_DECADAL_STATS = ClimateStats(
    mean=np.array([12.71, 6.53, 191.19, 3.37, 1014.85]),
    std=np.array([13.08, 12.14, 99.67, 2.66, 9.17]),
)

STATS_PRESETS = {"global_decadal": GLOBAL_DECADAL_STATS}


def nearest_rank_percentile(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile: value at rank ceil(p/100 * n), 1-based."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyTrainingSplit("no samples for percentile")
    rank = max(1, int(np.ceil(p / 100.0 * n)))
    return float(sorted_values[min(rank, n) - 1])


def compute_stats(catalog: DatasetCatalog, train_range: tuple[int, int]) -> ClimateStats:
    """Pooled mean/std and per-station percentiles over the training rows.

    Only originally observed (mask-true) cells enter.  Per-station moments
    are reduced in sorted station-id order so the result is exactly
    invariant to the catalog's station ordering.
    """
    a, b = train_range
    if b <= a:
        raise EmptyTrainingSplit("training split is empty")
    per_station: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    lower: dict[str, np.ndarray] = {}
    upper: dict[str, np.ndarray] = {}
    for meta in catalog.stations:
        s = catalog.read_station(meta.station_id)
        vals = s.values[a:b]
        msk = s.mask[a:b]
        cnt = np.zeros(N_VARIABLES)
        tot = np.zeros(N_VARIABLES)
        tot2 = np.zeros(N_VARIABLES)
        lo = np.empty((len(LOWER_PERCENTILES), N_VARIABLES))
        up = np.empty((len(UPPER_PERCENTILES), N_VARIABLES))
        for j in range(N_VARIABLES):
            x = vals[msk[:, j], j]
            if x.size == 0:
                raise EmptyTrainingSplit(
                    f"station {meta.station_id} has no observed training data "
                    f"for variable {VARIABLE_COLUMNS[j]}")
            cnt[j] = x.size
            tot[j] = x.sum()
            tot2[j] = (x * x).sum()
            xs = np.sort(x)
            for k, p in enumerate(LOWER_PERCENTILES):
                lo[k, j] = nearest_rank_percentile(xs, p)
            for k, p in enumerate(UPPER_PERCENTILES):
                up[k, j] = nearest_rank_percentile(xs, p)
        per_station[meta.station_id] = (cnt, tot, tot2)
        lower[meta.station_id] = lo
        upper[meta.station_id] = up
    cnt = np.zeros(N_VARIABLES)
    tot = np.zeros(N_VARIABLES)
    tot2 = np.zeros(N_VARIABLES)
    for sid in sorted(per_station):
        c, t, t2 = per_station[sid]
        cnt += c
        tot += t
        tot2 += t2
    mean = tot / cnt
    var = np.maximum(tot2 / cnt - mean * mean, 0.0)
    return ClimateStats(mean=mean, std=np.sqrt(var), lower=lower, upper=upper)


def standardize(values: np.ndarray, stats: ClimateStats) -> np.ndarray:
    """z = (x - mean) / std along the trailing variable axis."""
    return (values - stats.mean) / stats.std


def destandardize(z: np.ndarray, stats: ClimateStats) -> np.ndarray:
    return z * stats.std + stats.mean


# ---------------------------------------------------------------------------
# chronological split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitRanges:
    """Half-open hour-index ranges into the catalog grid."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def range_of(self, name: str) -> tuple[int, int]:
        return getattr(self, name)


def chronological_split(catalog: DatasetCatalog, mode: str = "ratio") -> SplitRanges:
    """Disjoint, ordered, covering train/val/test ranges.

    ``ratio`` takes the first 80% / next 10% / last 10% of hours.
    ``calendar`` splits whole calendar years 8:1:1 by year count (e.g. a
    2014-2023 decade gives 2014-2021 / 2022 / 2023); it requires the grid
    to start at a year boundary and span whole years.
    """
    n = catalog.length
    if n < 10:
        raise SplitTooShort(f"need at least 10 hours, have {n}")
    if mode == "ratio":
        a = int(n * 0.8)
        b = int(n * 0.9)
        return SplitRanges(train=(0, a), val=(a, b), test=(b, n))
    if mode == "calendar":
        start = catalog.start
        if (start.month, start.day, start.hour) != (1, 1, 0):
            raise SplitTooShort("calendar split needs the grid to start at Jan 1 00:00 UTC")
        # collect year boundaries covered by the grid
        boundaries = [0]
        years = []
        y = start.year
        while True:
            nxt = to_epoch_hours(datetime(y + 1, 1, 1, tzinfo=timezone.utc)) - catalog.start_epoch_hour
            if nxt > n:
                break
            years.append(y)
            boundaries.append(nxt)
            if nxt == n:
                break
            y += 1
        if boundaries[-1] != n or len(years) < 3:
            raise SplitTooShort("calendar split needs at least 3 whole years")
        k = len(years)
        n_train = max(1, int(round(k * 0.8)))
        n_val = max(1, int(round(k * 0.1)))
        if n_train + n_val >= k:
            n_train = k - 2
            n_val = 1
        return SplitRanges(train=(0, boundaries[n_train]),
                           val=(boundaries[n_train], boundaries[n_train + n_val]),
                           test=(boundaries[n_train + n_val], n))
    raise SplitTooShort(f"unknown split mode {mode!r}")


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """A batch of forecasting windows in standardized units.

    ``inputs`` (B, N, T, V) immediately precedes ``targets`` (B, N, tau, V)
    on the hourly grid.  ``markers`` are per-step (month, day, weekday,
    hour) integers for the lookback window; ``geo`` is (N, 2) of
    (longitude, latitude) degrees; ``target_start_hours`` gives the epoch
    hour of each element's first target step.
    """

    inputs: np.ndarray
    targets: np.ndarray
    markers: np.ndarray
    geo: np.ndarray
    target_start_hours: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


_MARKER_CACHE: dict[int, tuple[int, int, int, int]] = {}


def time_markers(epoch_hour: int) -> tuple[int, int, int, int]:
    """(month 1..12, day 1..31, weekday Mon=0, hour 0..23) for a UTC epoch hour."""
    hit = _MARKER_CACHE.get(epoch_hour)
    if hit is None:
        dt = from_epoch_hours(epoch_hour)
        hit = (dt.month, dt.day, dt.weekday(), dt.hour)
        _MARKER_CACHE[epoch_hour] = hit
    return hit


def window_count(split_len: int, lookback: int, horizon: int, stride: int) -> int:
    if split_len < lookback + horizon:
        raise SplitTooShort(
            f"split of {split_len} hours cannot fit lookback {lookback} + horizon {horizon}")
    return (split_len - lookback - horizon) // stride + 1


def make_windows(catalog: DatasetCatalog, split_range: tuple[int, int],
                 stats: ClimateStats, lookback: int = 48, horizon: int = 24,
                 stride: int = 1, batch: int = 8, shuffle: bool = False,
                 seed: int = 0, values: np.ndarray | None = None,
                 ) -> Iterator[WindowBatch]:
    """Yield standardized window batches from one split.

    Windows never cross the split boundary; iteration order is
    deterministic given ``seed`` (sequential unless ``shuffle``).
    ``values`` may pass pre-loaded (N, T, V) physical values to avoid
    re-reading the CSVs.
    """
    a, b = split_range
    n_pos = window_count(b - a, lookback, horizon, stride)
    if values is None:
        values, _ = catalog.load_values()
    z = standardize(values[:, a:b, :], stats)
    geo = catalog.geo()
    starts = a + stride * np.arange(n_pos)
    order = np.arange(n_pos)
    if shuffle:
        rng = np.random.Generator(np.random.PCG64(seed))
        rng.shuffle(order)
    base_hour = catalog.start_epoch_hour
    for lo in range(0, n_pos, batch):
        sel = order[lo:lo + batch]
        bsz = len(sel)
        inputs = np.empty((bsz, len(catalog.stations), lookback, N_VARIABLES))
        targets = np.empty((bsz, len(catalog.stations), horizon, N_VARIABLES))
        markers = np.empty((bsz, lookback, 4), dtype=np.int64)
        tstart = np.empty(bsz, dtype=np.int64)
        for i, w in enumerate(sel):
            s0 = int(starts[w]) - a          # start within the split slice
            inputs[i] = z[:, s0:s0 + lookback, :]
            targets[i] = z[:, s0 + lookback:s0 + lookback + horizon, :]
            h0 = base_hour + int(starts[w])
            for t in range(lookback):
                markers[i, t] = time_markers(h0 + t)
            tstart[i] = h0 + lookback
        yield WindowBatch(inputs=inputs, targets=targets, markers=markers,
                          geo=geo, target_start_hours=tstart)
