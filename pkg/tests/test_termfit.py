import numpy as np
import pytest

from hjmcal.engine import lsc, termfit
from hjmcal.errors import NegativeIncrement, NoPositiveRoot, NoValidGrouping
from hjmcal.models import DeliveryWindow, LscModel, TermCorrection, VsTarget

M1 = DeliveryWindow(start=0.25, end=1 / 3)
M2 = DeliveryWindow(start=1 / 3, end=5 / 12)
Q = DeliveryWindow(start=0.25, end=0.5)
SLOTS = [("M1", M1, 0.2), ("M2", M2, 0.2), ("Q", Q, 0.1), ("Q", Q, 0.2)]


def _targets(model: LscModel, scale: dict[str, float] | None = None) -> list[VsTarget]:
    scale = scale or {}
    out = []
    for cid, w, t in SLOTS:
        var = lsc.model_vs_variance(model, w.start, w.end, t)
        label = f"{cid}@{t:.4f}"
        out.append(VsTarget(contract_id=cid, window=w, maturity=t, variance=var * scale.get(label, 1.0)))
    return out


# A month inside a long h-group contract plus a month beyond it; the g-support share of the long window is small.
N1 = DeliveryWindow(start=1.0, end=13 / 12)
S = DeliveryWindow(start=0.25, end=1.0)
G_TRUE = {"M1": 1.08, "N1": 0.95}
H_TRUE = [1.1, 0.9]


def _corrected_targets(model: LscModel) -> list[VsTarget]:
    truth = TermCorrection(g_knots=[0.25, 1 / 3, 1.0, 13 / 12], g_values=[G_TRUE["M1"], 1.0, G_TRUE["N1"]],
                           h_knots=[0.0, 0.1, 0.3], h_values=H_TRUE)
    out = []
    for cid, w, t in [("M1", M1, 0.2), ("N1", N1, 0.2), ("S", S, 0.1), ("S", S, 0.3)]:
        var = lsc.model_vs_variance_corrected(model, truth, w, t)
        out.append(VsTarget(contract_id=cid, window=w, maturity=t, variance=var))
    return out


class TestGrouping:
    def test_default_keeps_last_maturity_in_g(self, level_model):
        grouping = termfit.assign_groups(_targets(level_model))
        labels = grouping.labels()
        assert labels["g"] == ["M1@0.2000", "M2@0.2000", "Q@0.2000"]
        assert labels["h"] == ["Q@0.1000"]
        assert termfit.grouping_violations(grouping) == []

    def test_single_smile_goes_to_g(self, level_model):
        grouping = termfit.assign_groups(_targets(level_model)[:1])
        assert len(grouping.g_group) == 1 and not grouping.h_group

    def test_empty(self):
        with pytest.raises(NoValidGrouping):
            termfit.assign_groups([])

    def test_unknown_policy(self, level_model):
        with pytest.raises(ValueError):
            termfit.assign_groups(_targets(level_model), policy="random")

    def test_all_g_rejects_repeated_contract(self, level_model):
        with pytest.raises(NoValidGrouping):
            termfit.assign_groups(_targets(level_model), policy="all-g")

    def test_all_h_rejects_coinciding_maturities(self, level_model):
        with pytest.raises(NoValidGrouping):
            termfit.assign_groups(_targets(level_model), policy="all-h")

    def test_calendar_contract_stays_in_h(self, level_model):
        cal = DeliveryWindow(start=1.0, end=2.0)
        targets = _targets(level_model) + [
            VsTarget(contract_id="Cal", window=cal, maturity=0.5, variance=0.09),
        ]
        grouping = termfit.assign_groups(targets)
        assert "Cal@0.5000" in grouping.labels()["h"]

    def test_violations_reported(self, level_model):
        t = _targets(level_model)
        bad = termfit.SmileGrouping(g_group=[t[2], t[3]], h_group=[t[0], t[1]])
        problems = termfit.grouping_violations(bad)
        assert "one maturity per futures" in problems
        assert "no coinciding maturities" in problems


class TestFixedPoint:
    def test_consistent_targets_need_no_correction(self, slope_model):
        result, _ = termfit.calibrate_step2(_targets(slope_model), slope_model)
        np.testing.assert_allclose(result.g, 1.0, atol=1e-10)
        np.testing.assert_allclose(result.h, 1.0, atol=1e-10)
        assert result.iterations == 1

    def test_uniform_scaling_absorbed_by_h(self, level_model):
        targets = _targets(level_model, {f"{c}@{t:.4f}": 1.21 for c, _, t in SLOTS})
        result, _ = termfit.calibrate_step2(targets, level_model)
        assert result.h[0] == pytest.approx(1.1, rel=1e-10)
        np.testing.assert_allclose(result.g, 1.0, atol=1e-10)
        assert result.correction.h(0.05) == pytest.approx(1.1)

    def test_single_target_shift(self, slope_model):
        targets = _targets(slope_model, {"M1@0.2000": 1.1})
        result, _ = termfit.calibrate_step2(targets, slope_model)
        residuals = termfit.vs_residuals(result.correction, targets, slope_model)
        assert residuals.name == "relative_residual"
        assert residuals.abs().max() < 1e-8
        assert result.g[0] > 1.0
        assert list(result.log.columns) == ["iteration", "g_step", "max_vs_residual"]

    def test_smoothed_correction_still_exact(self, level_model):
        targets = _targets(level_model, {f"{c}@{t:.4f}": 1.21 for c, _, t in SLOTS})
        result, _ = termfit.calibrate_step2(targets, level_model, smooth=True)
        assert result.correction.smooth
        assert termfit.vs_residuals(result.correction, targets, level_model).abs().max() < 1e-8

    def test_recovers_known_corrections(self, level_model):
        targets = _corrected_targets(level_model)
        result, grouping = termfit.calibrate_step2(targets, level_model)
        assert grouping.labels() == {"g": ["M1@0.2000", "N1@0.2000"], "h": ["S@0.1000", "S@0.3000"]}
        np.testing.assert_allclose(result.g, [G_TRUE["M1"], G_TRUE["N1"]], atol=1e-9)
        np.testing.assert_allclose(result.h, H_TRUE, atol=1e-9)
        assert result.iterations <= 15
        assert result.log["max_vs_residual"].iloc[-1] < 1e-10
        assert termfit.vs_residuals(result.correction, targets, level_model).abs().max() < 1e-10

    def test_perturbed_start_returns_to_fixed_point(self, level_model):
        targets = _corrected_targets(level_model)
        result, grouping = termfit.calibrate_step2(targets, level_model)
        assert termfit.stability_probe(result, grouping, level_model, perturbation=0.05) < 1e-8
        again = termfit.fixed_point(grouping, level_model, start=result.g * np.array([1.05, 0.95]))
        np.testing.assert_allclose(again.g, result.g, atol=1e-8)
        np.testing.assert_allclose(again.h, result.h, atol=1e-8)

    def test_stability_probe(self, slope_model):
        targets = _targets(slope_model, {"M1@0.2000": 1.1})
        result, grouping = termfit.calibrate_step2(targets, slope_model)
        distance = termfit.stability_probe(result, grouping, slope_model)
        assert np.isfinite(distance) and distance >= 0.0


class TestFailures:
    def test_decreasing_total_variance(self, level_model):
        early = VsTarget(contract_id="Q", window=Q, maturity=0.1, variance=0.09)
        late = VsTarget(contract_id="Q", window=Q, maturity=0.2, variance=0.04)
        grouping = termfit.SmileGrouping(g_group=[], h_group=[early, late])
        with pytest.raises(NegativeIncrement):
            termfit.strip_h(np.ones(0), grouping, level_model)

    def test_no_positive_root(self, level_model):
        grouping = termfit.SmileGrouping(
            g_group=[VsTarget(contract_id="M1", window=M1, maturity=0.2, variance=0.0)], h_group=[])
        with pytest.raises(NoPositiveRoot):
            termfit.solve_g(np.ones(1), grouping, level_model)


class TestExistence:
    def test_without_h_group(self, level_model):
        grouping = termfit.assign_groups(_targets(level_model)[:1])
        assert termfit.check_existence(grouping, level_model).holds is None

    def test_nested_g_group_out_of_scope(self, level_model):
        grouping = termfit.assign_groups(_targets(level_model))
        assert termfit.check_existence(grouping, level_model).holds is None

    def test_ratio_computed(self, level_model):
        t = _targets(level_model)
        grouping = termfit.SmileGrouping(g_group=[t[0], t[1]], h_group=[t[2], t[3]])
        check = termfit.check_existence(grouping, level_model)
        assert isinstance(check.holds, bool)
        assert 0.0 < check.ratio < np.inf

    @staticmethod
    def _scaled_to_ratio(model: LscModel, ratio: float) -> termfit.SmileGrouping:
        grouping = termfit.assign_groups(_corrected_targets(model))
        base = termfit.check_existence(grouping, model).ratio
        m1 = grouping.g_group[0]
        scaled = m1.model_copy(update={"variance": m1.variance * ratio / base})
        return termfit.SmileGrouping(g_group=[scaled, *grouping.g_group[1:]], h_group=grouping.h_group)

    def test_half_ratio_holds_with_half_margin(self, level_model):
        check = termfit.check_existence(self._scaled_to_ratio(level_model, 0.5), level_model)
        assert check.holds is True
        assert check.ratio == pytest.approx(0.5, rel=1e-12)
        assert check.margin == pytest.approx(0.5, rel=1e-12)

    def test_oversized_inner_variance_fails(self, level_model):
        check = termfit.check_existence(self._scaled_to_ratio(level_model, 2.0), level_model)
        assert check.holds is False
        assert check.ratio == pytest.approx(2.0, rel=1e-12)
        assert check.margin < 0
