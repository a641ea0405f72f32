"""Operational verification: MAE/MSE by lead bucket, extreme-event SEDI,
and model-complexity reporting.

All error metrics run in physical units.  The extremal dependence score
classifies every cell as extreme or normal against per-station lower/upper
quantile thresholds and shares one denominator across both tails::

    score(p) = [#(pred < Q_L and obs < Q_L) + #(pred > Q_U and obs > Q_U)]
               / [#(obs < Q_L) + #(obs > Q_U)]

A (variable, level) cell with a zero denominator is reported as undefined,
never as zero or NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import (ClimateStats, LOWER_PERCENTILES, UPPER_PERCENTILES)
from .errors import EmptyBucket, SchemaMismatch, ShapeMismatch, ValueParse
from .ingest import N_VARIABLES, VARIABLE_COLUMNS

#: symmetric pairing of lower/upper tail levels, keyed by upper level
SEDI_PAIRS = {90.0: 10.0, 95.0: 5.0, 98.0: 2.0, 99.5: 0.5}
#: lower-tail names resolve to the same symmetric pair
_LEVEL_ALIASES = {v: k for k, v in SEDI_PAIRS.items()}

DEFAULT_LEAD_BUCKETS = (24, 72, 120, 168)

ANGLE_COLUMN = "WND_ANGLE"


@dataclass
class ForecastSet:
    """Predictions and targets in physical units: (samples, N, tau, V)."""

    predictions: np.ndarray
    targets: np.ndarray
    station_ids: list[str]
    variables: tuple = VARIABLE_COLUMNS
    lead_hours: np.ndarray | None = None

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.predictions.shape != self.targets.shape:
            raise ShapeMismatch(
                f"predictions {self.predictions.shape} vs targets {self.targets.shape}")
        if self.predictions.ndim != 4:
            raise ShapeMismatch("forecast arrays must be (samples, N, tau, V)")
        if self.predictions.shape[1] != len(self.station_ids):
            raise ShapeMismatch("station axis does not match station_ids")
        if not (np.isfinite(self.predictions).all() and np.isfinite(self.targets).all()):
            raise ShapeMismatch("forecast arrays must be finite")
        if self.lead_hours is None:
            self.lead_hours = np.arange(1, self.predictions.shape[2] + 1)
        self.lead_hours = np.asarray(self.lead_hours)

    @property
    def horizon(self) -> int:
        return self.predictions.shape[2]


def _errors(fs: ForecastSet, wind_angle_mode: str) -> np.ndarray:
    err = fs.predictions - fs.targets
    if wind_angle_mode not in ("plain", "circular"):
        raise ValueParse(f"unknown wind angle mode {wind_angle_mode!r}")
    if wind_angle_mode == "circular" and ANGLE_COLUMN in fs.variables:
        j = fs.variables.index(ANGLE_COLUMN)
        d = np.abs(err[..., j]) % 360.0
        err = err.copy()
        err[..., j] = np.minimum(d, 360.0 - d)
    return err


def mae_mse(fs: ForecastSet, bucket: Sequence[int] | None = None,
            wind_angle_mode: str = "circular") -> tuple[np.ndarray, np.ndarray]:
    """Plain means over every (sample, station, bucketed lead) cell.

    ``bucket`` lists the lead hours to include (default: all).  Returns
    per-variable (MAE, MSE) arrays in catalog variable order.
    """
    err = _errors(fs, wind_angle_mode)
    if bucket is not None:
        sel = np.isin(fs.lead_hours, np.asarray(list(bucket)))
        if not sel.any():
            raise EmptyBucket(f"no forecast leads fall in bucket {list(bucket)}")
        err = err[:, :, sel, :]
    mae = np.abs(err).mean(axis=(0, 1, 2))
    mse = (err ** 2).mean(axis=(0, 1, 2))
    return mae, mse


def lead_bucket_edges(edges: Sequence[int], horizon: int) -> list[tuple[str, np.ndarray]]:
    """Partition leads 1..horizon into right-closed buckets at ``edges``."""
    out = []
    prev = 0
    for e in edges:
        if prev >= horizon:
            break
        hi = min(e, horizon)
        out.append((str(e), np.arange(prev + 1, hi + 1)))
        prev = e
    return out


def sedi(fs: ForecastSet, stats: ClimateStats, level: float) -> list[float | None]:
    """Extremal dependence score per variable at one symmetric level.

    ``level`` may name either tail (90 and 10 give the same pair); counts
    pool over all stations with each station's own thresholds applied
    first.  Undefined cells (no observed extremes) return None.
    """
    level = float(level)
    upper_level = _LEVEL_ALIASES.get(level, level)
    if upper_level not in SEDI_PAIRS:
        raise ValueParse(f"unsupported extreme level {level}")
    lower_level = SEDI_PAIRS[upper_level]
    li = LOWER_PERCENTILES.index(lower_level)
    ui = UPPER_PERCENTILES.index(upper_level)
    hits = np.zeros(N_VARIABLES, dtype=np.int64)
    events = np.zeros(N_VARIABLES, dtype=np.int64)
    for s, sid in enumerate(fs.station_ids):
        if sid not in stats.lower or sid not in stats.upper:
            raise ValueParse(f"stats carry no thresholds for station {sid}")
        q_lo = stats.lower[sid][li]      # (V,)
        q_up = stats.upper[sid][ui]
        pred = fs.predictions[:, s]      # (S, tau, V)
        obs = fs.targets[:, s]
        obs_lo = obs < q_lo
        obs_up = obs > q_up
        hits += ((pred < q_lo) & obs_lo).sum(axis=(0, 1))
        hits += ((pred > q_up) & obs_up).sum(axis=(0, 1))
        events += obs_lo.sum(axis=(0, 1)) + obs_up.sum(axis=(0, 1))
    return [float(hits[j]) / float(events[j]) if events[j] > 0 else None
            for j in range(N_VARIABLES)]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-variable errors by lead bucket plus extremes and complexity.

    ``mae``/``mse`` map bucket label -> (V,) arrays; ``sedi`` maps upper
    level -> per-variable scores (None = undefined).  Timing fields are
    volatile and never serialized into the report artifacts.
    """

    buckets: list[str]
    mae: dict[str, np.ndarray]
    mse: dict[str, np.ndarray]
    sedi: dict[float, list[float | None]] = field(default_factory=dict)
    variables: tuple = VARIABLE_COLUMNS
    parameter_count: int = 0
    peak_memory_bytes: int = 0
    train_seconds: float | None = None
    inference_seconds_per_batch: float | None = None

    @property
    def parameter_millions(self) -> float:
        return self.parameter_count / 1e6

    def to_csv(self) -> str:
        lines = ["metric,variable,key,value"]
        for b in self.buckets:
            for j, v in enumerate(self.variables):
                lines.append(f"mae,{v},{b},{repr(float(self.mae[b][j]))}")
                lines.append(f"mse,{v},{b},{repr(float(self.mse[b][j]))}")
        for level in sorted(self.sedi):
            for j, v in enumerate(self.variables):
                x = self.sedi[level][j]
                lines.append(f"sedi,{v},{level},{'' if x is None else repr(float(x))}")
        lines.append(f"complexity,,parameter_count,{self.parameter_count}")
        lines.append(f"complexity,,parameter_millions,{repr(self.parameter_millions)}")
        lines.append(f"complexity,,peak_memory_bytes,{self.peak_memory_bytes}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        """Human-readable layout: variables across, MAE/MSE pairs per bucket."""
        cols = [v for v in self.variables]
        head = ["lead"] + [f"{v} MAE" for v in cols] + [f"{v} MSE" for v in cols]
        widths = [max(10, len(h) + 2) for h in head]
        rows = [head]
        for b in self.buckets:
            row = [b]
            row += [f"{self.mae[b][j]:.4f}" for j in range(len(cols))]
            row += [f"{self.mse[b][j]:.4f}" for j in range(len(cols))]
            rows.append(row)
        out = []
        for r in rows:
            out.append("".join(str(c).rjust(w) for c, w in zip(r, widths)))
        if self.sedi:
            out.append("")
            shead = ["level"] + [f"{v} SEDI" for v in cols]
            out.append("".join(h.rjust(w) for h, w in zip(shead, widths)))
            for level in sorted(self.sedi):
                row = [str(level)]
                for x in self.sedi[level]:
                    row.append("undef" if x is None else f"{x:.4f}")
                out.append("".join(str(c).rjust(w) for c, w in zip(row, widths)))
        out.append("")
        out.append(f"parameters: {self.parameter_count} ({self.parameter_millions:.4f} M)")
        return "\n".join(out) + "\n"


def evaluate_forecasts(fs: ForecastSet, stats: ClimateStats | None = None,
                       bucket_edges: Sequence[int] = DEFAULT_LEAD_BUCKETS,
                       levels: Sequence[float] = tuple(sorted(SEDI_PAIRS)),
                       wind_angle_mode: str = "circular") -> MetricReport:
    """Full report: bucketed MAE/MSE plus SEDI when thresholds are given."""
    buckets = lead_bucket_edges(bucket_edges, fs.horizon)
    if not buckets:
        raise EmptyBucket(f"no bucket edge covers horizon {fs.horizon}")
    mae = {}
    mse = {}
    for label, leads in buckets:
        a, m = mae_mse(fs, bucket=leads, wind_angle_mode=wind_angle_mode)
        mae[label] = a
        mse[label] = m
    report = MetricReport(buckets=[b for b, _ in buckets], mae=mae, mse=mse,
                          variables=fs.variables)
    if stats is not None and stats.lower and stats.upper:
        for level in levels:
            report.sedi[float(level)] = sedi(fs, stats, level)
    return report


def complexity_report(params_or_model) -> dict:
    """Exact trainable-element count, raw and in millions.

    Accepts a model exposing ``parameters()`` or an iterable of parameters;
    the peak-memory figure assumes float64 weights with gradient and two
    optimizer-moment buffers.
    """
    if hasattr(params_or_model, "parameters"):
        params = params_or_model.parameters()
    else:
        params = list(params_or_model)
    count = sum(p.tensor.size if hasattr(p, "tensor") else int(np.size(p)) for p in params)
    return {
        "parameter_count": int(count),
        "parameter_millions": count / 1e6,
        "peak_memory_bytes": int(count * 8 * 4),
    }


# ---------------------------------------------------------------------------
# forecast file and report IO
# ---------------------------------------------------------------------------

_FORECAST_SCHEMA = 1


def write_forecast_file(fs: ForecastSet, path) -> None:
    """Header line with shape metadata, then one CSV row per cell."""
    s, n, tau, v = fs.predictions.shape
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# schema={_FORECAST_SCHEMA} samples={s} stations={n} horizon={tau} "
                 f"variables={';'.join(fs.variables)}\n")
        fh.write("sample,station_id,lead_hour,variable,prediction,target\n")
        for i in range(s):
            for j, sid in enumerate(fs.station_ids):
                for t in range(tau):
                    lead = int(fs.lead_hours[t])
                    for k, var in enumerate(fs.variables):
                        fh.write(f"{i},{sid},{lead},{var},"
                                 f"{repr(float(fs.predictions[i, j, t, k]))},"
                                 f"{repr(float(fs.targets[i, j, t, k]))}\n")


def read_forecast_file(path) -> ForecastSet:
    with open(path, "r", encoding="ascii") as fh:
        head = fh.readline().rstrip("\n")
        if not head.startswith("# schema="):
            raise SchemaMismatch("missing forecast header line")
        meta = {}
        for tok in head[2:].split():
            k, _, val = tok.partition("=")
            meta[k] = val
        try:
            schema = int(meta["schema"])
            s = int(meta["samples"])
            n = int(meta["stations"])
            tau = int(meta["horizon"])
            variables = tuple(meta["variables"].split(";"))
        except (KeyError, ValueError) as exc:
            raise SchemaMismatch(f"bad forecast header: {exc}")
        if schema != _FORECAST_SCHEMA:
            raise SchemaMismatch(f"unsupported forecast schema {schema}")
        cols = fh.readline().rstrip("\n")
        if cols != "sample,station_id,lead_hour,variable,prediction,target":
            raise SchemaMismatch("bad forecast column header")
        pred = np.full((s, n, tau, len(variables)), np.nan)
        targ = np.full((s, n, tau, len(variables)), np.nan)
        station_ids: list[str] = []
        sid_index: dict[str, int] = {}
        lead_index: dict[int, int] = {}
        var_index = {v: k for k, v in enumerate(variables)}
        for lineno, line in enumerate(fh, start=3):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 6:
                raise ValueParse(f"line {lineno}: expected 6 columns", line=lineno)
            try:
                i = int(parts[0])
                lead = int(parts[2])
                p = float(parts[4])
                t = float(parts[5])
            except ValueError as exc:
                raise ValueParse(f"line {lineno}: {exc}", line=lineno)
            sid = parts[1]
            if sid not in sid_index:
                if len(sid_index) >= n:
                    raise SchemaMismatch(
                        f"line {lineno}: station {sid} exceeds header count {n}")
                sid_index[sid] = len(sid_index)
                station_ids.append(sid)
            if lead not in lead_index:
                if len(lead_index) >= tau:
                    raise SchemaMismatch(
                        f"line {lineno}: lead {lead} exceeds header horizon {tau}")
                lead_index[lead] = len(lead_index)
            var = parts[3]
            if var not in var_index:
                raise SchemaMismatch(f"line {lineno}: unknown variable {var}")
            if not (0 <= i < s):
                raise SchemaMismatch(f"line {lineno}: sample {i} out of range")
            pred[i, sid_index[sid], lead_index[lead], var_index[var]] = p
            targ[i, sid_index[sid], lead_index[lead], var_index[var]] = t
    if np.isnan(pred).any() or np.isnan(targ).any():
        raise SchemaMismatch("forecast file body does not cover the declared shape")
    leads = np.empty(tau, dtype=np.int64)
    for lead, k in lead_index.items():
        leads[k] = lead
    return ForecastSet(predictions=pred, targets=targ, station_ids=station_ids,
                       variables=variables, lead_hours=leads)


def write_report(report: MetricReport, path, paper_table: bool = False) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(report.to_csv())
    if paper_table:
        with open(str(path) + ".txt", "w", encoding="ascii", newline="\n") as fh:
            fh.write(report.table())


def write_timing(report: MetricReport, path) -> None:
    """Volatile wall-clock figures, kept out of the byte-stable artifacts."""
    doc = {"train_seconds": report.train_seconds,
           "inference_seconds_per_batch": report.inference_seconds_per_batch}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
