import math

import numpy as np
import pytest
from scipy import integrate

from hjmcal.engine import lsc
from hjmcal.models import DeliveryWindow, LscModel, RollingSpec, TermCorrection


def _kv_quad(model: LscModel, t: float, window: DeliveryWindow) -> np.ndarray:
    """Delivery average of the instantaneous factor shapes by direct quadrature."""
    out = []
    for f in range(model.n_factors):
        value, _ = integrate.quad(lambda T: float(lsc.shape_eval(model, f, t, T)), window.start, window.end,
                                  epsabs=1e-14, epsrel=1e-12)
        out.append(value / window.length)
    return np.asarray(out)


class TestShapes:
    def test_level_is_flat(self, level_model):
        np.testing.assert_allclose(lsc.shape_eval(level_model, 0, 0.0, [0.1, 1.0, 5.0]), 0.3)

    def test_slope_and_curvature(self, full_model):
        x = 0.3
        assert lsc.shape_eval(full_model, 1, 0.0, x) == pytest.approx(0.9 * math.exp(-x / 0.1))
        assert lsc.shape_eval(full_model, 2, 0.0, x) == pytest.approx(0.5 * (x / 0.4) * math.exp(-x / 0.4))

    def test_factor_shapes_stack(self, full_model):
        shapes = lsc.factor_shapes(full_model, 0.0, np.array([0.1, 0.2]))
        assert shapes.shape == (2, 3)

    def test_curvature_from_slopes_vanishes_at_zero(self):
        assert lsc.curvature_from_slopes(0.0, 1.0, 0.1, 0.2) == pytest.approx(0.0)


class TestBasis:
    def test_state_layout(self):
        basis = lsc.StateBasis.from_counts([0.1, 0.5], [0.3])
        assert [k.value for k in basis.kinds] == ["L", "S", "S", "C1", "C2"]
        assert basis.n_factors == 4
        assert basis.curvature_pairs == [(3, 4)]
        np.testing.assert_array_equal(basis.factor_of_state, [0, 1, 2, 3, 3])
        assert basis.rates[0] == 0.0

    def test_state_covariance_lifts_factors(self, full_model):
        x = lsc.state_covariance(full_model)
        assert x.shape == (4, 4)
        # both curvature states carry the curvature variance
        assert x[2, 2] == pytest.approx(0.25)
        assert x[3, 3] == pytest.approx(0.25)
        assert x[2, 3] == pytest.approx(0.25)


class TestKvVolatility:
    def test_slope_closed_form(self, slope_model):
        t, ts, te, tau = 0.1, 0.25, 0.5, 0.25
        vol = lsc.kv_volatility(slope_model, None, t, ts, te)
        expected = 0.8 * tau / (te - ts) * (math.exp(-(ts - t) / tau) - math.exp(-(te - t) / tau))
        assert vol[0] == pytest.approx(0.2)
        assert vol[1] == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("t", [0.0, 0.1, 0.24])
    def test_matches_quadrature(self, full_model, quarter, t):
        vol = lsc.kv_volatility(full_model, None, t, quarter.start, quarter.end)
        np.testing.assert_allclose(vol, _kv_quad(full_model, t, quarter), rtol=1e-10, atol=1e-14)

    def test_vector_times(self, full_model, quarter):
        times = np.array([0.0, 0.1, 0.2])
        out = lsc.kv_volatility(full_model, None, times, quarter.start, quarter.end)
        assert out.shape == (3, 3)
        np.testing.assert_allclose(out[1], lsc.kv_volatility(full_model, None, 0.1, quarter.start, quarter.end))

    def test_tiny_time_scale_stays_finite(self):
        model = LscModel(sigma_level=0.3, sigma_slope=[30.0], tau_slope=[0.0005],
                         sigma_curvature=[16.0], tau_curvature=[0.001], correlation=np.eye(3).tolist())
        w = DeliveryWindow(start=2.0, end=3.0)
        vol = lsc.kv_volatility(model, None, 1.9, w.start, w.end)
        assert np.all(np.isfinite(vol))
        var = lsc.integrated_covariance(model, w, w, 0.0, 1.9)
        assert np.isfinite(var) and var > 0


class TestIntegratedCovariance:
    def test_level_only(self, level_model, quarter):
        assert lsc.integrated_covariance(level_model, quarter, quarter, 0.0, 0.2) == pytest.approx(0.09 * 0.2)

    def test_empty_interval(self, full_model, quarter):
        assert lsc.integrated_covariance(full_model, quarter, quarter, 0.2, 0.2) == 0.0

    def test_matches_quadrature(self, full_model):
        wi = DeliveryWindow(start=0.25, end=0.5)
        wj = DeliveryWindow(start=0.5, end=1.5)
        r = full_model.corr

        def integrand(t):
            return float(_kv_quad(full_model, t, wi) @ r @ _kv_quad(full_model, t, wj))

        expected, _ = integrate.quad(integrand, 0.0, 0.2, epsabs=1e-12, epsrel=1e-9)
        assert lsc.integrated_covariance(full_model, wi, wj, 0.0, 0.2) == pytest.approx(expected, rel=1e-7)

    def test_symmetric(self, full_model):
        wi = DeliveryWindow(start=0.25, end=0.5)
        wj = DeliveryWindow(start=0.5, end=1.5)
        a = lsc.integrated_covariance(full_model, wi, wj, 0.0, 0.2)
        b = lsc.integrated_covariance(full_model, wj, wi, 0.0, 0.2)
        assert a == pytest.approx(b, rel=1e-12)

    def test_constant_h_scales_variance(self, full_model, quarter):
        base = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2)
        corr = TermCorrection(h_knots=[0.0, 0.2], h_values=[1.1])
        scaled = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2, corr)
        assert scaled == pytest.approx(1.21 * base, rel=1e-12)

    def test_constant_g_scales_variance(self, full_model, quarter):
        base = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2)
        corr = TermCorrection(g_knots=[0.0, 2.0], g_values=[0.9])
        scaled = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2, corr)
        assert scaled == pytest.approx(0.81 * base, rel=1e-12)

    def test_smooth_correction_consistent(self, full_model, quarter):
        piecewise = TermCorrection(g_knots=[0.0, 0.3, 0.6], g_values=[1.0, 1.0],
                                   h_knots=[0.0, 0.1, 0.2], h_values=[1.0, 1.0])
        smooth = piecewise.model_copy(update={"smooth": True})
        a = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2, piecewise)
        b = lsc.integrated_covariance(full_model, quarter, quarter, 0.0, 0.2, smooth)
        assert a == pytest.approx(b, rel=1e-8)


class TestModelQuantities:
    def test_vs_variance_level(self, level_model):
        assert lsc.model_vs_variance(level_model, 0.25, 0.5, 0.2) == pytest.approx(0.09)

    def test_rolling_covariance_level(self, level_model):
        a, b = RollingSpec(ts_days=30, te_days=60), RollingSpec(ts_days=90, te_days=180)
        assert lsc.model_covariance(level_model, a, b, 1 / 252) == pytest.approx(0.09)

    def test_slope_vol_decays_with_delivery(self, slope_model):
        near = lsc.model_vs_variance(slope_model, 0.1, 0.2, 0.05)
        far = lsc.model_vs_variance(slope_model, 1.0, 1.1, 0.05)
        assert near > far

    def test_correlation_matrix(self, full_model):
        windows = [DeliveryWindow(start=0.1, end=0.2), DeliveryWindow(start=0.5, end=1.5)]
        c = lsc.correlation_matrix(full_model, None, windows, 0.0)
        np.testing.assert_allclose(np.diag(c), 1.0)
        assert c[0, 1] == pytest.approx(lsc.instantaneous_correlation(full_model, None, *windows, 0.0))
        assert -1.0 <= c[0, 1] <= 1.0

    def test_level_only_perfect_correlation(self, level_model):
        windows = [DeliveryWindow(start=0.1, end=0.2), DeliveryWindow(start=0.5, end=1.5)]
        np.testing.assert_allclose(lsc.correlation_matrix(level_model, None, windows), 1.0)


class TestClosedForms:
    @pytest.mark.parametrize("kind", [lsc.StateKind.slope, lsc.StateKind.curv1])
    def test_beta_weight_is_delivery_average(self, kind):
        tau, ts, te = 0.3, 0.25, 0.5
        value, _ = integrate.quad(lambda T: float(lsc.b_value(kind, tau, T)), ts, te, epsabs=1e-14)
        assert lsc.beta_weight(kind, tau, ts, te) == pytest.approx(value / (te - ts), rel=1e-10)

    def test_cross_term_matches_quadrature(self):
        kp, kk = lsc.StateKind.slope, lsc.StateKind.curv2
        value, _ = integrate.quad(lambda t: float(lsc.a_value(kp, 0.5, t) * lsc.a_value(kk, 0.3, t)), 0.1, 0.4,
                                  epsabs=1e-14)
        assert lsc.cross_term(kp, kk, 0.5, 0.3, 0.1, 0.4) == pytest.approx(value, rel=1e-9)

    def test_state_loadings_scale_beta(self):
        basis = lsc.StateBasis.from_counts([0.2], [])
        window = DeliveryWindow(start=0.25, end=0.5)
        loads = lsc.state_loadings(basis, window)
        assert loads[0] == 1.0
        assert loads[1] * math.exp(-0.25 / 0.2) == pytest.approx(
            lsc.beta_weight(lsc.StateKind.slope, 0.2, 0.25, 0.5), rel=1e-12)

    def test_corrected_vs_variance(self, level_model, quarter):
        correction = TermCorrection(h_knots=[0.0, 0.5], h_values=[1.1])
        assert lsc.model_vs_variance_corrected(level_model, correction, quarter, 0.2) == pytest.approx(0.09 * 1.21)
