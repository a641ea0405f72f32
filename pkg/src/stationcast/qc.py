"""Quality control: raw observations to complete hourly station series.

Stages, in pipeline order:

1. ``align_to_hours``     - snap each grid hour to the nearest observation
                            within +/-30 minutes (ties resolve earlier).
2. ``completeness_filter``- accept a station only if strictly more than 90%
                            of grid cells were originally observed
                            (measured before any filling).
3. ``flag_outliers``      - hard physical bounds, then a rolling-median/MAD
                            screen iterated to a fixpoint; flagged cells
                            become missing again.
4. ``interpolate_short_gaps`` - linear fill of interior gaps of at most 12
                            hours with both endpoints valid (wind angle on
                            the shortest arc).
5. ``fill_long_gaps``     - remaining cells from a pluggable filler; the
                            default is the station's own (hour-of-day,
                            month) climatology.

Missing cells are NaN until filled; ``mask`` stays true only for cells that
hold an original observation, so no stage ever flips mask false -> true.
"""

from __future__ import annotations

import math
import os
from concurrent import futures
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ClimatologyUnavailable, UnsortedInput
from .ingest import (N_VARIABLES, RawObservation, StationMeta, Variable,
                     VARIABLE_ORDER)

ALIGN_WINDOW_MINUTES = 30
MAX_INTERP_GAP_HOURS = 12
COMPLETENESS_THRESHOLD = 0.90

_VAR_INDEX = {v: i for i, v in enumerate(VARIABLE_ORDER)}
_ANGLE_IDX = _VAR_INDEX[Variable.WIND_ANGLE]

#: hard plausibility bounds per variable (lower, upper), physical units
HARD_BOUNDS = {
    Variable.TEMPERATURE: (-90.0, 60.0),
    Variable.DEWPOINT: (-90.0, 45.0),
    Variable.WIND_ANGLE: (0.0, 360.0),
    Variable.WIND_RATE: (0.0, 115.0),
    Variable.SEA_LEVEL_PRESSURE: (860.0, 1090.0),
}

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def to_epoch_hours(ts: datetime) -> int:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int((ts - EPOCH) // timedelta(hours=1))


def from_epoch_hours(h: int) -> datetime:
    return EPOCH + timedelta(hours=int(h))


@dataclass
class StationSeries:
    """One station's hourly grid of the five variables.

    ``values`` is (T, V) float64 with NaN marking missing cells; ``mask``
    is true only where the cell holds an original observation; ``time_diff``
    is the signed minute offset of that observation from the grid hour
    (0 for interpolated or filled cells).  ``|time_diff| <= 30`` wherever
    the mask is true.
    """

    meta: StationMeta
    start: datetime
    values: np.ndarray
    mask: np.ndarray
    time_diff: np.ndarray

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def start_epoch_hour(self) -> int:
        return to_epoch_hours(self.start)

    def copy(self) -> "StationSeries":
        return StationSeries(self.meta, self.start, self.values.copy(),
                             self.mask.copy(), self.time_diff.copy())

    def hour_index(self) -> np.ndarray:
        return np.arange(self.length) + self.start_epoch_hour


@dataclass
class QcReport:
    station_id: str
    hourly_coverage_before: float = 0.0
    hourly_coverage_after: float = 0.0
    interpolated_cells: int = 0
    gap_filled_cells: int = 0
    outliers_flagged: int = 0
    accepted: bool = False

    def to_json_dict(self) -> dict:
        return {
            "station_id": self.station_id,
            "hourly_coverage_before": self.hourly_coverage_before,
            "hourly_coverage_after": self.hourly_coverage_after,
            "interpolated_cells": self.interpolated_cells,
            "gap_filled_cells": self.gap_filled_cells,
            "outliers_flagged": self.outliers_flagged,
            "accepted": self.accepted,
        }


# ---------------------------------------------------------------------------
# stage 1: temporal alignment
# ---------------------------------------------------------------------------


def align_to_hours(meta: StationMeta, observations: Iterable[tuple[datetime, list[RawObservation]]],
                   start: datetime, length: int,
                   window_minutes: int = ALIGN_WINDOW_MINUTES) -> StationSeries:
    """Snap raw observations onto the hourly grid.

    Each grid hour takes the nearest non-missing observation within the
    window per variable; equal distances before and after the hour resolve
    to the earlier observation.  Raises ``UnsortedInput`` if record
    timestamps decrease.
    """
    times_min: list[int] = []          # observation time in minutes since epoch
    vals = [[] for _ in range(N_VARIABLES)]
    miss = [[] for _ in range(N_VARIABLES)]
    prev = None
    for ts, obs in observations:
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        t_min = int((ts - EPOCH) // timedelta(minutes=1))
        if prev is not None and t_min < prev:
            raise UnsortedInput(f"observation at {ts} precedes prior record")
        prev = t_min
        times_min.append(t_min)
        for o in obs:
            j = _VAR_INDEX[o.variable]
            vals[j].append(o.value)
            miss[j].append(o.is_missing)

    values = np.full((length, N_VARIABLES), np.nan)
    mask = np.zeros((length, N_VARIABLES), dtype=bool)
    time_diff = np.zeros((length, N_VARIABLES), dtype=np.int32)
    if not times_min:
        return StationSeries(meta, start, values, mask, time_diff)

    start_min = to_epoch_hours(start) * 60
    grid_min = start_min + 60 * np.arange(length)
    t_all = np.asarray(times_min, dtype=np.int64)
    for j in range(N_VARIABLES):
        ok = ~np.asarray(miss[j], dtype=bool)
        if not ok.any():
            continue
        t = t_all[ok]
        v = np.asarray(vals[j], dtype=np.float64)[ok]
        # nearest candidate around each grid hour; tie -> earlier
        right = np.searchsorted(t, grid_min, side="left")
        left = right - 1
        d_left = np.where(left >= 0, grid_min - t[np.clip(left, 0, len(t) - 1)], np.iinfo(np.int64).max)
        d_right = np.where(right < len(t), t[np.clip(right, 0, len(t) - 1)] - grid_min, np.iinfo(np.int64).max)
        use_left = d_left <= d_right
        dist = np.where(use_left, d_left, d_right)
        pick = np.where(use_left, np.clip(left, 0, len(t) - 1), np.clip(right, 0, len(t) - 1))
        hit = dist <= window_minutes
        values[hit, j] = v[pick[hit]]
        mask[hit, j] = True
        offs = t[pick[hit]] - grid_min[hit]
        time_diff[hit, j] = offs.astype(np.int32)
    return StationSeries(meta, start, values, mask, time_diff)


# ---------------------------------------------------------------------------
# stage 2: completeness
# ---------------------------------------------------------------------------


def completeness_filter(series: StationSeries,
                        threshold: float = COMPLETENESS_THRESHOLD) -> tuple[bool, QcReport]:
    """Accept the station iff its observed fraction strictly exceeds ``threshold``.

    Validity means originally observed (mask true), so this must run before
    interpolation or gap filling.
    """
    coverage = float(series.mask.sum()) / series.mask.size
    accepted = coverage > threshold
    report = QcReport(station_id=series.meta.station_id,
                      hourly_coverage_before=coverage,
                      hourly_coverage_after=coverage,
                      accepted=accepted)
    return accepted, report


# ---------------------------------------------------------------------------
# stage 3: outlier screening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutlierPolicy:
    k: float = 8.0
    window_hours: int = 24
    apply_mad_to_angle: bool = False  # linear MAD is meaningless across the 0/360 seam


def _rolling_median_mad(x: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered rolling median and MAD, NaN-aware, shrunk at the edges."""
    n = len(x)
    med = np.full(n, np.nan)
    mad = np.full(n, np.nan)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        w = x[lo:hi]
        w = w[~np.isnan(w)]
        if w.size == 0:
            continue
        m = np.median(w)
        med[i] = m
        mad[i] = np.median(np.abs(w - m))
    return med, mad


def flag_outliers(series: StationSeries,
                  policy: OutlierPolicy = OutlierPolicy()) -> tuple[StationSeries, int]:
    """Two-stage screen: hard physical bounds, then rolling-median/MAD.

    A cell is flagged when ``|value - rolling median| > k * MAD`` over a
    centered window of ``window_hours`` grid neighbours.  Only originally
    observed (mask-true) cells are candidates and enter the rolling
    statistics, and the MAD stage is iterated to a fixpoint; together these
    make the pipeline idempotent.  Flagged cells become missing and
    re-enter interpolation.
    """
    out = series.copy()
    flagged = 0
    half = policy.window_hours // 2
    for j, var in enumerate(VARIABLE_ORDER):
        col = np.where(out.mask[:, j], out.values[:, j], np.nan)
        lo, hi = HARD_BOUNDS[var]
        have = ~np.isnan(col)
        if var is Variable.WIND_ANGLE:
            bad = have & ((col < lo) | (col >= hi))
        else:
            bad = have & ((col < lo) | (col > hi))
        if bad.any():
            flagged += int(bad.sum())
            col[bad] = np.nan
            out.values[bad, j] = np.nan
            out.mask[bad, j] = False
            out.time_diff[bad, j] = 0
        if var is Variable.WIND_ANGLE and not policy.apply_mad_to_angle:
            continue
        while True:
            med, mad = _rolling_median_mad(col, half)
            dev = np.abs(col - med)
            bad = (~np.isnan(col)) & (~np.isnan(med)) & (dev > policy.k * mad)
            if not bad.any():
                break
            flagged += int(bad.sum())
            col[bad] = np.nan
            out.values[bad, j] = np.nan
            out.mask[bad, j] = False
            out.time_diff[bad, j] = 0
    return out, flagged


# ---------------------------------------------------------------------------
# stage 4: short-gap interpolation
# ---------------------------------------------------------------------------


def _angle_lerp(a: float, b: float, w: float) -> float:
    """Interpolate angles along the shortest arc; result in [0, 360)."""
    d = (b - a + 180.0) % 360.0 - 180.0
    return (a + w * d) % 360.0


def interpolate_short_gaps(series: StationSeries,
                           max_gap_hours: int = MAX_INTERP_GAP_HOURS) -> tuple[StationSeries, int]:
    """Linearly fill interior missing runs of length <= ``max_gap_hours``.

    Both endpoints must hold values; longer runs and leading/trailing runs
    are untouched.  Filled cells keep mask false and time_diff 0.  Wind
    angle interpolates on the circle.
    """
    out = series.copy()
    filled = 0
    n = out.length
    for j in range(N_VARIABLES):
        col = out.values[:, j]
        valid = ~np.isnan(col)
        if valid.all() or not valid.any():
            continue
        idx = np.flatnonzero(valid)
        for a, b in zip(idx[:-1], idx[1:]):
            gap = b - a - 1
            if gap == 0 or gap > max_gap_hours:
                continue
            for t in range(a + 1, b):
                w = (t - a) / (b - a)
                if j == _ANGLE_IDX:
                    col[t] = _angle_lerp(col[a], col[b], w)
                else:
                    col[t] = col[a] + w * (col[b] - col[a])
                filled += 1
    return out, filled


# ---------------------------------------------------------------------------
# climatology and stage 5: long-gap filling
# ---------------------------------------------------------------------------


def _circular_mean_deg(angles: np.ndarray) -> float:
    rad = np.deg2rad(angles)
    s, c = np.sin(rad).mean(), np.cos(rad).mean()
    return float(np.rad2deg(np.arctan2(s, c)) % 360.0)


@dataclass
class Climatology:
    """Per-station (month, hour-of-day) mean of each variable.

    ``table`` is (12, 24, V); ``available`` marks buckets with data.
    ``fallback`` is the per-variable mean over all valid cells, used when a
    bucket is empty.  Wind angle uses circular means.
    """

    table: np.ndarray
    available: np.ndarray
    fallback: np.ndarray
    _resolved_cache: np.ndarray | None = None

    @classmethod
    def from_series(cls, series: StationSeries) -> "Climatology":
        table = np.zeros((12, 24, N_VARIABLES))
        available = np.zeros((12, 24, N_VARIABLES), dtype=bool)
        fallback = np.full(N_VARIABLES, np.nan)
        hours = series.hour_index()
        months = np.empty(series.length, dtype=np.int64)
        hod = np.empty(series.length, dtype=np.int64)
        for i, h in enumerate(hours):
            m, hh = _month_hour(int(h))
            months[i] = m
            hod[i] = hh
        for j, var in enumerate(VARIABLE_ORDER):
            col = series.values[:, j]
            ok = series.mask[:, j] & ~np.isnan(col)
            if ok.any():
                if var is Variable.WIND_ANGLE:
                    fallback[j] = _circular_mean_deg(col[ok])
                else:
                    fallback[j] = float(col[ok].mean())
            for m in range(12):
                for hh in range(24):
                    sel = ok & (months == m) & (hod == hh)
                    if sel.any():
                        if var is Variable.WIND_ANGLE:
                            table[m, hh, j] = _circular_mean_deg(col[sel])
                        else:
                            table[m, hh, j] = float(col[sel].mean())
                        available[m, hh, j] = True
        return cls(table=table, available=available, fallback=fallback)

    def value(self, epoch_hour: int, var_index: int) -> float:
        m, hh = _month_hour(epoch_hour)
        if self.available[m, hh, var_index]:
            return float(self.table[m, hh, var_index])
        fb = self.fallback[var_index]
        if math.isnan(fb):
            raise ClimatologyUnavailable(
                f"no valid data for variable index {var_index}")
        return float(fb)

    def resolved(self) -> np.ndarray:
        """(12, 24, V) table with empty buckets replaced by the fallback mean."""
        if self._resolved_cache is None:
            table = np.where(self.available, self.table, self.fallback)
            if np.isnan(table).any():
                raise ClimatologyUnavailable("station has a variable with no valid data at all")
            self._resolved_cache = table
        return self._resolved_cache

    def lookup(self, epoch_hours: np.ndarray) -> np.ndarray:
        """Vectorized table read: (len(epoch_hours), V) with fallbacks applied."""
        table = self.resolved()
        months = np.empty(len(epoch_hours), dtype=np.int64)
        hods = np.empty(len(epoch_hours), dtype=np.int64)
        for i, h in enumerate(epoch_hours):
            months[i], hods[i] = _month_hour(int(h))
        return table[months, hods]


_MONTH_HOUR_CACHE: dict[int, tuple[int, int]] = {}


def _month_hour(epoch_hour: int) -> tuple[int, int]:
    hit = _MONTH_HOUR_CACHE.get(epoch_hour)
    if hit is None:
        dt = from_epoch_hours(epoch_hour)
        hit = (dt.month - 1, dt.hour)
        _MONTH_HOUR_CACHE[epoch_hour] = hit
    return hit


class GapFiller:
    """Fills every remaining missing cell of a series (mask stays false)."""

    def fill(self, series: StationSeries) -> tuple[StationSeries, int]:
        raise NotImplementedError


class ClimatologyFiller(GapFiller):
    """Default filler: the station's own (month, hour) climatology."""

    def fill(self, series: StationSeries) -> tuple[StationSeries, int]:
        out = series.copy()
        missing = np.isnan(out.values)
        if not missing.any():
            return out, 0
        clim = Climatology.from_series(out)
        hours = out.hour_index()
        rows = np.flatnonzero(missing.any(axis=1))
        filled = 0
        for t in rows:
            vals = clim.lookup(hours[t:t + 1])[0]
            for j in range(N_VARIABLES):
                if missing[t, j]:
                    out.values[t, j] = vals[j]
                    out.time_diff[t, j] = 0
                    filled += 1
        return out, filled


class TableFiller(GapFiller):
    """Fills gaps from an externally supplied value table.

    ``table`` maps epoch hour -> length-V array (e.g. parsed from a station
    CSV in the standard schema); gap cells take the table value exactly.
    Cells absent from the table fall back to climatology.
    """

    def __init__(self, table: dict[int, np.ndarray]):
        self.table = table

    def fill(self, series: StationSeries) -> tuple[StationSeries, int]:
        out = series.copy()
        missing = np.isnan(out.values)
        if not missing.any():
            return out, 0
        hours = out.hour_index()
        filled = 0
        leftover = False
        for t in np.flatnonzero(missing.any(axis=1)):
            row = self.table.get(int(hours[t]))
            for j in range(N_VARIABLES):
                if missing[t, j]:
                    if row is not None and not math.isnan(row[j]):
                        out.values[t, j] = float(row[j])
                        out.time_diff[t, j] = 0
                        filled += 1
                    else:
                        leftover = True
        if leftover:
            out, extra = ClimatologyFiller().fill(out)
            filled += extra
        return out, filled


def fill_long_gaps(series: StationSeries, filler: GapFiller | None = None) -> tuple[StationSeries, int]:
    """Complete the series with the given filler (default: climatology)."""
    return (filler or ClimatologyFiller()).fill(series)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QcConfig:
    window_minutes: int = ALIGN_WINDOW_MINUTES
    max_gap_hours: int = MAX_INTERP_GAP_HOURS
    completeness_threshold: float = COMPLETENESS_THRESHOLD
    outlier_policy: OutlierPolicy = OutlierPolicy()


def run_pipeline(series: StationSeries, config: QcConfig = QcConfig(),
                 filler: GapFiller | None = None) -> tuple[StationSeries, QcReport]:
    """Run completeness, outlier, interpolation, and fill stages on an
    aligned series.  Rejected stations are returned unmodified."""
    accepted, report = completeness_filter(series, config.completeness_threshold)
    if not accepted:
        return series, report
    series, n_out = flag_outliers(series, config.outlier_policy)
    series, n_interp = interpolate_short_gaps(series, config.max_gap_hours)
    series, n_fill = fill_long_gaps(series, filler)
    report.outliers_flagged = n_out
    report.interpolated_cells = n_interp
    report.gap_filled_cells = n_fill
    report.hourly_coverage_after = float(np.isfinite(series.values).mean())
    return series, report


def thread_count() -> int:
    """Parallelism cap from STATIONCAST_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("STATIONCAST_THREADS", "1")))
    except ValueError:
        return 1


def map_stations(fn: Callable, items: Sequence):
    """Apply ``fn`` per station, optionally threaded; results in input order."""
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with futures.ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
