"""Explicit physics forecast: Newtonian relaxation with pressure-wind forcing.

Per station, variables evolve by forward Euler at the hourly step::

    dT/dt = -kappa_T * (T - T_clim(t))
    dD/dt = -kappa_D * (D - D_clim(t))
    dP/dt = -kappa_P * (P - P_clim(t))
    dV/dt = beta * |dP/dt| - kappa_V * (V - V_clim(t)),  V clamped at the floor
    wind angle: persistence

Climatology is the per-station (month, hour-of-day) table from the QC
stage.  With every rate at zero the integrator reduces exactly to
persistence.  The relaxation equations are affine-equivariant, so the same
integrator runs in standardized units given transformed parameters (see
:func:`standardized_core_inputs`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ClimateStats
from .errors import InsufficientData, UnstableConfig
from .ingest import N_VARIABLES, VARIABLE_ORDER
from .qc import Climatology, StationSeries

IDX_T, IDX_D, IDX_ANGLE, IDX_RATE, IDX_P = range(5)

#: variables governed by a relaxation rate (everything but wind angle)
RELAXED = (IDX_T, IDX_D, IDX_RATE, IDX_P)


@dataclass
class DynamicCoreParams:
    """Relaxation rates (1/hour), pressure-wind coupling, and the step size."""

    kappa: np.ndarray = field(default_factory=lambda: np.zeros(N_VARIABLES))
    beta: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        if self.dt <= 0:
            raise UnstableConfig(f"dt must be > 0, got {self.dt}")
        if np.any(self.kappa < 0) or np.any(self.kappa * self.dt >= 2.0):
            raise UnstableConfig(
                f"need 0 <= kappa*dt < 2 for Euler stability, got kappa={self.kappa}")
        if self.kappa[IDX_ANGLE] != 0.0:
            raise UnstableConfig("wind angle holds persistence; its rate must be 0")

    def to_json_dict(self) -> dict:
        return {"kappa": [float(k) for k in self.kappa],
                "beta": float(self.beta), "dt": float(self.dt)}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DynamicCoreParams":
        return cls(kappa=np.array(doc["kappa"], dtype=np.float64),
                   beta=float(doc["beta"]), dt=float(doc["dt"]))

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def integrate(last_state: np.ndarray, start_epoch_hour: int, horizon: int,
              params: DynamicCoreParams, climatologies: Sequence[Climatology],
              wind_floor: float = 0.0) -> np.ndarray:
    """Integrate the core from ``last_state`` (N, V) over ``horizon`` steps.

    ``start_epoch_hour`` is the hour of the last observed state; the
    forecast covers hours ``start+1 .. start+horizon``.  Returns (N, tau, V).
    Deterministic and free of the autodiff graph: the result is a constant
    with respect to model training.
    """
    params.validate()
    n = last_state.shape[0]
    if last_state.shape != (n, N_VARIABLES):
        raise UnstableConfig(f"last_state must be (N, {N_VARIABLES}), got {last_state.shape}")
    if not np.isfinite(last_state).all():
        raise UnstableConfig("last_state contains non-finite values")
    out = np.empty((n, horizon, N_VARIABLES))
    state = last_state.astype(np.float64).copy()
    kappa, beta, dt = params.kappa, params.beta, params.dt
    if not kappa.any() and beta == 0.0:
        out[:] = state[:, None, :]
        return out
    # climatology evaluated at the time of the current state (forward Euler)
    hours = start_epoch_hour + np.arange(horizon)
    clim_all = np.empty((n, horizon, N_VARIABLES))
    for i, c in enumerate(climatologies):
        clim_all[i] = c.lookup(hours)
    for step in range(horizon):
        clim = clim_all[:, step, :]
        dp = -kappa[IDX_P] * (state[:, IDX_P] - clim[:, IDX_P])
        new = state.copy()
        for j in (IDX_T, IDX_D, IDX_P):
            new[:, j] = state[:, j] - dt * kappa[j] * (state[:, j] - clim[:, j])
        dv = beta * np.abs(dp) - kappa[IDX_RATE] * (state[:, IDX_RATE] - clim[:, IDX_RATE])
        new[:, IDX_RATE] = np.maximum(state[:, IDX_RATE] + dt * dv, wind_floor)
        # wind angle: persistence
        state = new
        out[:, step, :] = state
    return out


def standardized_core_inputs(params: DynamicCoreParams, climatologies: Sequence[Climatology],
                             stats: ClimateStats) -> tuple[DynamicCoreParams, list[Climatology], float]:
    """Map the core into standardized coordinates.

    Relaxation is affine-equivariant, so integrating standardized state
    against standardized climatology with ``beta' = beta * std_P / std_V``
    and the wind floor at the standardized zero reproduces the physical
    integration exactly (up to rounding).
    """
    beta_std = params.beta * float(stats.std[IDX_P]) / float(stats.std[IDX_RATE])
    p_std = DynamicCoreParams(kappa=params.kappa.copy(), beta=beta_std, dt=params.dt)
    clim_std = []
    for c in climatologies:
        clim_std.append(Climatology(
            table=(c.table - stats.mean) / stats.std,
            available=c.available.copy(),
            fallback=(c.fallback - stats.mean) / stats.std,
        ))
    wind_floor = (0.0 - float(stats.mean[IDX_RATE])) / float(stats.std[IDX_RATE])
    return p_std, clim_std, wind_floor


def fit_params(series_list: Sequence[StationSeries], train_range: tuple[int, int],
               climatologies: Sequence[Climatology] | None = None,
               dt: float = 1.0, min_pairs: int = 100) -> DynamicCoreParams:
    """One-step least-squares fit of the relaxation rates and coupling.

    For each relaxed variable, regress the hourly increment on the negative
    anomaly from climatology; ``beta`` regresses wind-rate increments on
    absolute pressure increments.  Estimates are clipped into the Euler
    stability region.  Only originally observed cell pairs enter.
    """
    a, b = train_range
    if climatologies is None:
        climatologies = [Climatology.from_series(s) for s in series_list]
    num = np.zeros(N_VARIABLES)
    den = np.zeros(N_VARIABLES)
    pairs = np.zeros(N_VARIABLES, dtype=np.int64)
    sxy = sxx = sx = sy = 0.0
    n_pw = 0
    for s, clim in zip(series_list, climatologies):
        hours = s.hour_index()[a:b]
        vals = s.values[a:b]
        msk = s.mask[a:b]
        climvals = clim.lookup(hours)
        for j in RELAXED:
            ok = msk[:-1, j] & msk[1:, j]
            if not ok.any():
                continue
            x = vals[:-1, j][ok]
            dx = vals[1:, j][ok] - x
            anom = x - climvals[:-1, j][ok]
            num[j] += float((dx * -anom).sum())
            den[j] += float((anom * anom).sum())
            pairs[j] += int(ok.sum())
        ok = (msk[:-1, IDX_P] & msk[1:, IDX_P] & msk[:-1, IDX_RATE] & msk[1:, IDX_RATE])
        if ok.any():
            dp = np.abs(vals[1:, IDX_P][ok] - vals[:-1, IDX_P][ok])
            dv = vals[1:, IDX_RATE][ok] - vals[:-1, IDX_RATE][ok]
            sxy += float((dp * dv).sum())
            sxx += float((dp * dp).sum())
            sx += float(dp.sum())
            sy += float(dv.sum())
            n_pw += int(ok.sum())
    for j in RELAXED:
        if pairs[j] < min_pairs:
            raise InsufficientData(
                f"variable {VARIABLE_ORDER[j].value}: {int(pairs[j])} one-step pairs"
                f" (< {min_pairs})")
    if n_pw < min_pairs:
        raise InsufficientData(f"pressure-wind pairs: {n_pw} (< {min_pairs})")
    kappa_max = (2.0 / dt) * (1.0 - 1e-9)
    kappa = np.zeros(N_VARIABLES)
    for j in RELAXED:
        k = (num[j] / den[j] / dt) if den[j] > 0 else 0.0
        kappa[j] = min(max(k, 0.0), kappa_max)
    var_dp = sxx - sx * sx / n_pw
    beta = ((sxy - sx * sy / n_pw) / var_dp / dt) if var_dp > 0 else 0.0
    return DynamicCoreParams(kappa=kappa, beta=beta, dt=dt)
