import numpy as np
import pytest

from hjmcal.engine import montecarlo as mc
from hjmcal.engine.pricer import model_vs_vol
from hjmcal.engine.surface import black_call
from hjmcal.errors import GridMismatch
from hjmcal.models import DeliveryWindow, LiftedHestonParams, ModelBundle

Q1 = mc.SimContract(label="Q1", window=DeliveryWindow(start=0.25, end=0.5), f0=100.0)
Q2 = mc.SimContract(label="Q2", window=DeliveryWindow(start=0.5, end=0.75), f0=80.0)


class TestSimulate:
    def test_shapes_and_stride(self, heston_bundle):
        paths = mc.simulate(heston_bundle, [Q1, Q2], 0.25, n_paths=50, seed=1, stride=10)
        n_steps = int(round(0.25 * 365))
        assert paths.forward.shape == (50, len(paths.times), 2)
        assert paths.times[-1] == pytest.approx(0.25)
        assert len(paths.times) == len(range(0, n_steps + 1, 10)) + 1
        assert paths.variance.shape == (50, len(paths.times))
        np.testing.assert_allclose(paths.forward[:, 0, 0], 100.0)

    def test_independent_of_worker_count(self, heston_bundle):
        a = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=250, seed=11, block_size=100, workers=1)
        b = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=250, seed=11, block_size=100, workers=3)
        np.testing.assert_array_equal(a.forward, b.forward)
        np.testing.assert_array_equal(a.variance, b.variance)

    def test_seed_changes_paths(self, heston_bundle):
        a = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=20, seed=1)
        b = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=20, seed=2)
        assert not np.allclose(a.terminal(), b.terminal())

    def test_delivery_before_horizon(self, heston_bundle):
        with pytest.raises(ValueError):
            mc.simulate(heston_bundle, [Q1], 0.3, n_paths=10, seed=0)

    def test_deterministic_variance_stays_at_one(self, deterministic_bundle):
        paths = mc.simulate(deterministic_bundle, [Q1], 0.1, n_paths=20, seed=3)
        np.testing.assert_allclose(mc.variance_trajectory(paths), 1.0)
        assert paths.floored_fraction == 0.0

    def test_variance_nonnegative(self, heston_bundle):
        paths = mc.simulate(heston_bundle, [Q1], 0.25, n_paths=200, seed=5)
        assert paths.variance.min() >= 0.0
        assert 0.0 <= paths.floored_fraction <= 1.0

    def test_level_model_modes_agree(self, heston_bundle):
        kv = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=30, seed=4, mode="kv")
        exact = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=30, seed=4, mode="exact")
        np.testing.assert_allclose(exact.forward, kv.forward, rtol=1e-12)


class TestPricing:
    def test_black_price_within_error(self, deterministic_bundle):
        paths = mc.simulate(deterministic_bundle, [Q1], 0.25, n_paths=20_000, seed=9, stride=1000)
        strikes = np.array([90.0, 100.0, 110.0])
        prices, stderr = mc.mc_call_prices(paths, strikes)
        exact = black_call(100.0, strikes, 0.25, 0.3)
        assert np.all(np.abs(prices - exact) < 4.0 * stderr)

    def test_martingale(self, heston_bundle):
        paths = mc.simulate(heston_bundle, [Q1], 0.25, n_paths=10_000, seed=21, stride=1000)
        terminal = paths.terminal()
        se = terminal.std(ddof=1) / np.sqrt(terminal.size)
        assert abs(terminal.mean() - 100.0) < 4.0 * se

    def test_realized_variance_matches_variance_swap(self, heston_bundle):
        horizon = 0.2
        paths = mc.simulate(heston_bundle, [Q1], horizon, n_paths=4000, seed=31)
        ratio = mc.realized_variance(paths) / (model_vs_vol(heston_bundle, Q1.window, horizon) ** 2 * horizon)
        se = ratio.std(ddof=1) / np.sqrt(ratio.size)
        assert abs(ratio.mean() - 1.0) < 4.0 * se + 2e-3

    def test_implied_vols(self, deterministic_bundle):
        paths = mc.simulate(deterministic_bundle, [Q1], 0.25, n_paths=20_000, seed=9, stride=1000)
        vols = mc.mc_implied_vols(paths, [100.0])
        assert vols[0] == pytest.approx(0.3, abs=0.01)


class TestKvValidation:
    def test_level_model_has_no_gap(self, heston_bundle):
        kv = mc.simulate(heston_bundle, [Q1, Q2], 0.1, n_paths=500, seed=8, mode="kv", stride=5)
        exact = mc.simulate(heston_bundle, [Q1, Q2], 0.1, n_paths=500, seed=8, mode="exact", stride=5)
        frame = mc.kv_validation(exact, kv, heston_bundle)
        assert list(frame.columns) == ["contract", "rmse", "rmse_relative", "correlation_gap", "model_correlation_gap",
                                       "smile_gap"]
        np.testing.assert_allclose(frame["rmse"], 0.0, atol=1e-9)
        np.testing.assert_allclose(frame["smile_gap"], 0.0, atol=1e-8)

    def test_slope_model_exact_differs(self, slope_model):
        bundle = ModelBundle(lsc=slope_model, heston=LiftedHestonParams.deterministic(2))
        kv = mc.simulate(bundle, [Q1], 0.1, n_paths=200, seed=2, mode="kv")
        exact = mc.simulate(bundle, [Q1], 0.1, n_paths=200, seed=2, mode="exact")
        frame = mc.kv_validation(exact, kv, bundle)
        assert 0.0 < frame["rmse_relative"].iloc[0] <= 0.005

    @pytest.mark.slow
    def test_market_shaped_instance(self, slope_model):
        bundle = ModelBundle(lsc=slope_model, heston=LiftedHestonParams(c=[0.5, 1.0], x=[1.0, 10.0], rho_hat=[-0.4, -0.3]))
        kv = mc.simulate(bundle, [Q1, Q2], 0.25, n_paths=20_000, seed=17, mode="kv", stride=5)
        exact = mc.simulate(bundle, [Q1, Q2], 0.25, n_paths=20_000, seed=17, mode="exact", stride=5)
        frame = mc.kv_validation(exact, kv, bundle)
        assert frame["rmse_relative"].max() <= 0.005
        assert frame["smile_gap"].max() < 0.002
        assert frame["correlation_gap"].max() < 1e-3

    def test_seed_mismatch(self, heston_bundle):
        a = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=10, seed=1)
        b = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=10, seed=2)
        with pytest.raises(GridMismatch):
            mc.kv_validation(a, b, heston_bundle)

    def test_grid_mismatch(self, heston_bundle):
        a = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=10, seed=1)
        b = mc.simulate(heston_bundle, [Q1], 0.1, n_paths=10, seed=1, stride=2)
        with pytest.raises(GridMismatch):
            mc.kv_validation(a, b, heston_bundle)
