"""Reference forecasters: persistence, climatology, and a ridge linear map.

All three are pure functions of the window (plus fitted state for the
linear model) and produce standardized (B, N, tau, V) arrays matching the
model's output convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import ClimateStats, WindowBatch, standardize
from .errors import InsufficientData
from .ingest import N_VARIABLES
from .qc import Climatology


def persistence_forecast(batch: WindowBatch, horizon: int | None = None) -> np.ndarray:
    """Repeat the last observed step at every lead time."""
    tau = horizon if horizon is not None else batch.targets.shape[2]
    last = batch.inputs[:, :, -1, :]
    return np.repeat(last[:, :, None, :], tau, axis=2)


def climatology_forecast(batch: WindowBatch, climatologies: Sequence[Climatology],
                         stats: ClimateStats, horizon: int | None = None) -> np.ndarray:
    """Per-station (month, hour) climatology at each target step, standardized."""
    tau = horizon if horizon is not None else batch.targets.shape[2]
    b, n = batch.inputs.shape[:2]
    out = np.empty((b, n, tau, N_VARIABLES))
    for i in range(b):
        hours = int(batch.target_start_hours[i]) + np.arange(tau)
        for s, clim in enumerate(climatologies):
            out[i, s] = clim.lookup(hours)
    return standardize(out, stats)


@dataclass
class LinearDirectWeights:
    """Per-variable ridge map from the flattened lookback to the horizon.

    ``weights[v]`` is (lookback + 1, horizon): the trailing row is the
    intercept, which ridge leaves unpenalized.
    """

    weights: np.ndarray
    lookback: int
    horizon: int

    def norm(self) -> float:
        return float(np.sqrt((self.weights[:, :-1, :] ** 2).sum()))


def linear_direct_fit(batches: Sequence[WindowBatch], lookback: int, horizon: int,
                      ridge: float = 1e-3) -> LinearDirectWeights:
    """Least squares per variable, pooled over samples and stations."""
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    for batch in batches:
        b, n = batch.inputs.shape[:2]
        xs.append(batch.inputs.reshape(b * n, lookback, N_VARIABLES))
        ys.append(batch.targets.reshape(b * n, horizon, N_VARIABLES))
    if not xs:
        raise InsufficientData("no training windows for the linear baseline")
    x = np.concatenate(xs)          # (M, T, V)
    y = np.concatenate(ys)          # (M, tau, V)
    m = x.shape[0]
    weights = np.empty((N_VARIABLES, lookback + 1, horizon))
    ones = np.ones((m, 1))
    penalty = np.eye(lookback + 1) * ridge
    penalty[-1, -1] = 0.0           # intercept unpenalized
    for v in range(N_VARIABLES):
        a = np.concatenate([x[:, :, v], ones], axis=1)
        weights[v] = np.linalg.solve(a.T @ a + penalty, a.T @ y[:, :, v])
    return LinearDirectWeights(weights=weights, lookback=lookback, horizon=horizon)


def linear_direct_forecast(batch: WindowBatch, w: LinearDirectWeights) -> np.ndarray:
    b, n = batch.inputs.shape[:2]
    x = batch.inputs.reshape(b * n, w.lookback, N_VARIABLES)
    out = np.empty((b * n, w.horizon, N_VARIABLES))
    ones = np.ones((b * n, 1))
    for v in range(N_VARIABLES):
        a = np.concatenate([x[:, :, v], ones], axis=1)
        out[:, :, v] = a @ w.weights[v]
    return out.reshape(b, n, w.horizon, N_VARIABLES)
