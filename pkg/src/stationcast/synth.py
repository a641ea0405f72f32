"""Synthetic desk-scale datasets for exercising the full pipeline.

Three catalog presets, all written in the standard station-CSV schema:

``sine``     near-noiseless diurnal/synoptic harmonics; a model should be
             able to drive training error toward zero.
``ar1``      AR(1) anomalies on top of a diurnal cycle; predictability
             decays with lead time, so error grows monotonically.
``dyncore``  trajectories of the relaxation core itself (known rates and
             pressure-wind coupling, stochastic climatology forcing) plus
             observation noise; wind-rate fluctuations co-vary with
             pressure tendencies by construction.

``encode_raw_archive`` re-encodes a catalog into raw text records with
timestamp jitter and injected missing fields, for ingest/QC testing.
"""

from __future__ import annotations

import math
import os
from datetime import datetime, timezone

import numpy as np

from .dataset import DatasetCatalog, save_catalog
from .dynamics import IDX_D, IDX_ANGLE, IDX_P, IDX_RATE, IDX_T
from .ingest import (DEFAULT_SCHEMA, N_VARIABLES, StationMeta, encode_field,
                     encode_missing)
from .qc import StationSeries, from_epoch_hours, to_epoch_hours

DEFAULT_START = datetime(2020, 1, 1, tzinfo=timezone.utc)


def _station_metas(n_stations: int, rng: np.random.Generator) -> list[StationMeta]:
    metas = []
    for i in range(n_stations):
        metas.append(StationMeta(
            station_id=f"SYN{i:04d}",
            latitude=float(rng.uniform(-60, 60)),
            longitude=float(rng.uniform(-180, 179)),
            elevation=float(rng.uniform(0, 1500))))
    return metas


def _series(meta: StationMeta, start: datetime, values: np.ndarray) -> StationSeries:
    n = values.shape[0]
    return StationSeries(meta=meta, start=start, values=values,
                         mask=np.ones((n, N_VARIABLES), dtype=bool),
                         time_diff=np.zeros((n, N_VARIABLES), dtype=np.int32))


def _clip_physical(values: np.ndarray) -> np.ndarray:
    values[:, IDX_RATE] = np.clip(values[:, IDX_RATE], 0.0, 110.0)
    values[:, IDX_ANGLE] = values[:, IDX_ANGLE] % 360.0
    values[:, IDX_T] = np.clip(values[:, IDX_T], -85.0, 55.0)
    values[:, IDX_D] = np.clip(values[:, IDX_D], -85.0, 44.0)
    values[:, IDX_P] = np.clip(values[:, IDX_P], 870.0, 1080.0)
    return values


def generate_sine_series(meta: StationMeta, start: datetime, hours: int,
                         rng: np.random.Generator, noise: float = 0.02) -> StationSeries:
    h = np.arange(hours)
    phase = rng.uniform(0, 2 * math.pi)
    values = np.empty((hours, N_VARIABLES))
    diurnal = np.sin(2 * math.pi * (h % 24) / 24.0 + phase)
    synoptic = np.sin(2 * math.pi * h / 96.0 + phase * 0.5)
    values[:, IDX_T] = 15.0 + 8.0 * diurnal
    values[:, IDX_D] = 8.0 + 6.0 * diurnal
    values[:, IDX_ANGLE] = (180.0 + 90.0 * synoptic) % 360.0
    values[:, IDX_RATE] = 4.0 + 2.0 * diurnal
    values[:, IDX_P] = 1013.0 + 6.0 * synoptic
    values += noise * rng.standard_normal(values.shape) * np.array([8, 6, 20, 2, 6])
    return _series(meta, start, _clip_physical(values))


def generate_ar1_series(meta: StationMeta, start: datetime, hours: int,
                        rng: np.random.Generator, phi: float = 0.9) -> StationSeries:
    h = np.arange(hours)
    phase = rng.uniform(0, 2 * math.pi)
    diurnal = np.sin(2 * math.pi * (h % 24) / 24.0 + phase)
    scales = np.array([5.0, 4.0, 60.0, 1.5, 5.0])
    anomalies = np.empty((hours, N_VARIABLES))
    innov = rng.standard_normal((hours, N_VARIABLES)) * math.sqrt(1 - phi * phi)
    state = rng.standard_normal(N_VARIABLES)
    for t in range(hours):
        state = phi * state + innov[t]
        anomalies[t] = state
    values = np.empty((hours, N_VARIABLES))
    values[:, IDX_T] = 12.0 + 6.0 * diurnal + scales[IDX_T] * anomalies[:, IDX_T]
    values[:, IDX_D] = 6.0 + 4.0 * diurnal + scales[IDX_D] * anomalies[:, IDX_D]
    values[:, IDX_ANGLE] = (190.0 + scales[IDX_ANGLE] * anomalies[:, IDX_ANGLE]) % 360.0
    values[:, IDX_RATE] = 3.5 + 1.0 * diurnal + scales[IDX_RATE] * anomalies[:, IDX_RATE]
    values[:, IDX_P] = 1014.0 + scales[IDX_P] * anomalies[:, IDX_P]
    return _series(meta, start, _clip_physical(values))


def generate_dyncore_series(meta: StationMeta, start: datetime, hours: int,
                            rng: np.random.Generator,
                            kappa: tuple = (0.15, 0.15, 0.0, 0.35, 0.12),
                            beta: float = 0.6,
                            clim_coupling: float = 0.5,
                            process_noise: float = 0.25,
                            obs_noise: tuple = (0.6, 0.6, 6.0, 0.45, 0.5),
                            ) -> tuple[StationSeries, StationSeries]:
    """Integrate the relaxation equations under stochastic forcing.

    ``clim_coupling`` makes the wind-speed climatology co-vary positively
    with the pressure climatology, so pressure and wind tendencies share a
    signed relationship on top of the |dP/dt| forcing.  Returns the
    observed (noisy) series and the noise-free truth.
    """
    h0 = to_epoch_hours(start)
    h = np.arange(hours)
    phase = rng.uniform(0, 2 * math.pi)
    diurnal = np.sin(2 * math.pi * ((h0 + h) % 24) / 24.0 + phase)
    synoptic = np.sin(2 * math.pi * h / 72.0 + phase) + 0.6 * np.sin(
        2 * math.pi * h / 30.0 + 2.3 * phase)
    p_clim = 1013.0 + 7.0 * synoptic
    v_clim = 3.5 + clim_coupling * (p_clim - 1013.0)
    t_clim = 12.0 + 7.0 * diurnal
    d_clim = 6.0 + 5.0 * diurnal

    kt, kd, _, kv, kp = kappa
    truth = np.empty((hours, N_VARIABLES))
    state = np.array([t_clim[0], d_clim[0], 200.0, max(v_clim[0], 0.5), p_clim[0]])
    eta = process_noise * rng.standard_normal((hours, N_VARIABLES)) * np.array(
        [1.0, 1.0, 0.0, 0.3, 1.0])
    for t in range(hours):
        dp = -kp * (state[IDX_P] - p_clim[t])
        new = state.copy()
        new[IDX_T] = state[IDX_T] - kt * (state[IDX_T] - t_clim[t]) + eta[t, IDX_T]
        new[IDX_D] = state[IDX_D] - kd * (state[IDX_D] - d_clim[t]) + eta[t, IDX_D]
        new[IDX_P] = state[IDX_P] + dp + eta[t, IDX_P]
        dv = beta * abs(dp) - kv * (state[IDX_RATE] - v_clim[t])
        new[IDX_RATE] = max(state[IDX_RATE] + dv + eta[t, IDX_RATE], 0.0)
        state = new
        truth[t] = state
    observed = truth + rng.standard_normal(truth.shape) * np.asarray(obs_noise)
    observed[:, IDX_ANGLE] = truth[:, IDX_ANGLE]
    return (_series(meta, start, _clip_physical(observed.copy())),
            _series(meta, start, _clip_physical(truth.copy())))


PRESETS = ("sine", "ar1", "dyncore")


def generate_catalog(root, preset: str, stations: int, hours: int, seed: int = 0,
                     start: datetime = DEFAULT_START, **kwargs) -> DatasetCatalog:
    """Build and persist a synthetic catalog under ``root``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    metas = _station_metas(stations, rng)
    series = []
    for meta in metas:
        if preset == "sine":
            series.append(generate_sine_series(meta, start, hours, rng, **kwargs))
        elif preset == "ar1":
            series.append(generate_ar1_series(meta, start, hours, rng, **kwargs))
        elif preset == "dyncore":
            observed, _ = generate_dyncore_series(meta, start, hours, rng, **kwargs)
            series.append(observed)
        else:
            raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    return save_catalog(root, series)


# ---------------------------------------------------------------------------
# raw-archive encoding (for ingest/QC end-to-end runs)
# ---------------------------------------------------------------------------


def encode_raw_archive(catalog: DatasetCatalog, out_dir, jitter_minutes: int = 10,
                       missing_rate: float = 0.02, seed: int = 0) -> None:
    """Re-encode a catalog as raw record text files plus ``stations.json``."""
    import json

    from datetime import timedelta

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(seed))
    for meta in catalog.stations:
        s = catalog.read_station(meta.station_id)
        lines = []
        for t in range(s.length):
            jitter = int(rng.integers(-jitter_minutes, jitter_minutes + 1)) if jitter_minutes else 0
            total_min = (s.start_epoch_hour + t) * 60 + jitter
            stamp = (from_epoch_hours(0) + timedelta(minutes=total_min)
                     ).strftime("%Y-%m-%dT%H:%M:%S")
            fields = []
            for j, codec in enumerate(DEFAULT_SCHEMA):
                if rng.random() < missing_rate:
                    fields.append(encode_missing(codec))
                else:
                    x = float(s.values[t, j])
                    if j == IDX_ANGLE:
                        x = round(x) % 360  # keep the encoded angle inside [0, 360)
                    fields.append(encode_field(x, 1, codec))
            lines.append(stamp + "," + ",".join(fields))
        with open(os.path.join(out_dir, f"{meta.station_id}.txt"), "w",
                  encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    doc = {"stations": [{"id": m.station_id, "latitude": m.latitude,
                         "longitude": m.longitude, "elevation": m.elevation}
                        for m in catalog.stations]}
    with open(os.path.join(out_dir, "stations.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
