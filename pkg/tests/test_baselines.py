import math
from datetime import datetime, timezone

import numpy as np
import pytest

from stationcast.baselines import (LinearDirectWeights, climatology_forecast,
                                   linear_direct_fit, linear_direct_forecast,
                                   persistence_forecast)
from stationcast.dataset import ClimateStats, WindowBatch
from stationcast.dynamics import DynamicCoreParams
from stationcast.ingest import N_VARIABLES

from test_model import const_clim, flat_stats, make_batch, tiny_model


class TestPersistence:
    def test_constant_series_has_zero_error(self, rng):
        batch = make_batch(rng)
        batch.inputs[:] = 2.5
        batch.targets[:] = 2.5
        pred = persistence_forecast(batch)
        assert np.abs(pred - batch.targets).max() == 0.0

    def test_forecast_independent_of_lead(self, rng):
        batch = make_batch(rng)
        pred = persistence_forecast(batch)
        for t in range(pred.shape[2]):
            np.testing.assert_array_equal(pred[:, :, t, :], batch.inputs[:, :, -1, :])

    def test_ar1_mae_nondecreasing_in_lead(self, rng):
        # simulate many AR(1) windows; persistence error grows with lead
        phi = 0.9
        n_windows, lookback, tau = 1000, 5, 8
        mae = np.zeros(tau)
        for _ in range(n_windows):
            x = np.empty(lookback + tau)
            x[0] = rng.standard_normal() / math.sqrt(1 - phi * phi)
            for t in range(1, len(x)):
                x[t] = phi * x[t - 1] + rng.standard_normal()
            mae += np.abs(x[lookback:] - x[lookback - 1])
        mae /= n_windows
        assert np.all(np.diff(mae) >= -0.02 * mae[:-1])

    def test_matches_model_with_zero_head_and_persistence_core_bitwise(self, rng):
        model = tiny_model(core=DynamicCoreParams())
        batch = make_batch(rng)
        model_pred = model.forecast(batch).prediction.data
        baseline = persistence_forecast(batch)
        assert model_pred.tobytes() == baseline.tobytes()


class TestClimatologyForecast:
    def test_constant_series_zero_error(self, rng):
        batch = make_batch(rng, n=2)
        clims = [const_clim([10, 5, 180, 3, 1013]), const_clim([12, 6, 170, 2, 1010])]
        stats = flat_stats()
        pred = climatology_forecast(batch, clims, stats)
        np.testing.assert_allclose(pred[:, 0, :, 0], 10.0)
        np.testing.assert_allclose(pred[:, 1, :, 4], 1010.0)

    def test_white_noise_mse_close_to_variance(self, rng):
        # forecasting the mean of white noise: MSE ~= variance (within 10%)
        batch = make_batch(rng, b=40, n=1, lookback=8, horizon=100)
        batch.targets = rng.standard_normal((40, 1, 100, N_VARIABLES)) * 2.0
        clims = [const_clim([0, 0, 0, 0, 0])]
        pred = climatology_forecast(batch, clims, flat_stats(), horizon=100)
        mse = ((pred - batch.targets) ** 2).mean(axis=(0, 1, 2))
        assert np.all(np.abs(mse - 4.0) < 0.4)


class TestLinearDirect:
    def test_recovers_known_linear_map(self, rng):
        lookback, tau = 6, 3
        w_true = rng.standard_normal((N_VARIABLES, lookback, tau)) * 0.3
        b_true = rng.standard_normal((N_VARIABLES, tau)) * 0.1
        batches = []
        for _ in range(30):
            batch = make_batch(rng, b=4, n=2, lookback=lookback, horizon=tau)
            for v in range(N_VARIABLES):
                batch.targets[..., v] = (batch.inputs[..., v] @ w_true[v]) + b_true[v]
            batches.append(batch)
        w = linear_direct_fit(batches, lookback, tau, ridge=1e-8)
        test_batch = batches[-1]
        pred = linear_direct_forecast(test_batch, w)
        mse = ((pred - test_batch.targets) ** 2).mean()
        assert mse < 1e-10

    def test_zero_inputs_forecast_equals_bias(self, rng):
        lookback, tau = 4, 2
        batches = []
        for _ in range(10):
            batch = make_batch(rng, b=4, n=2, lookback=lookback, horizon=tau)
            batch.targets[:] = 1.5
            batches.append(batch)
        w = linear_direct_fit(batches, lookback, tau)
        zero_batch = make_batch(rng, b=1, n=1, lookback=lookback, horizon=tau)
        zero_batch.inputs[:] = 0.0
        pred = linear_direct_forecast(zero_batch, w)
        np.testing.assert_allclose(pred, w.weights[:, -1, :].T[None, None], atol=1e-9)

    def test_ridge_shrinks_weights_monotonically(self, rng):
        lookback, tau = 5, 2
        batches = [make_batch(rng, b=8, n=2, lookback=lookback, horizon=tau)
                   for _ in range(5)]
        norms = []
        for lam in (1e-3, 1e0, 1e3, 1e6):
            w = linear_direct_fit(batches, lookback, tau, ridge=lam)
            norms.append(w.norm())
        assert all(a > b for a, b in zip(norms[:-1], norms[1:]))
        assert norms[-1] < 1e-3 * norms[0]
