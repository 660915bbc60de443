import numpy as np
import pytest

from hjmcal.engine import hypercube
from hjmcal.models import VsTarget


class TestWindows:
    def test_standard_set(self):
        windows = hypercube.standard_windows()
        assert list(windows) == ["D1", *[f"M{i}" for i in range(1, 13)], "Q1", "Q2", "Q3", "Q4", "Cal1"]
        assert windows["Q2"].start == pytest.approx(windows["M4"].start)
        assert windows["Cal1"].length == pytest.approx(1.0)


class TestTables:
    def test_atm_vol_table(self, deterministic_bundle):
        windows = {"M1": hypercube.standard_windows()["M1"]}
        frame = hypercube.atm_vol_table(deterministic_bundle, windows, [0.05, 0.5])
        assert list(frame["kind"]) == ["month", "month"]
        assert frame["atm_vol"].iloc[0] == pytest.approx(0.3, abs=1e-7)
        assert np.isnan(frame["atm_vol"].iloc[1])

    def test_integrated_variance_matches_target(self, deterministic_bundle):
        w = hypercube.standard_windows()["Q2"]
        target = VsTarget(contract_id="Q2", window=w, maturity=0.2, variance=0.1)
        frame = hypercube.integrated_variance_table(deterministic_bundle, {"Q2": w}, [0.2, 0.25], [target])
        assert frame["model_total_variance"].iloc[0] == pytest.approx(0.09 * 0.2)
        assert frame["market_total_variance"].iloc[0] == pytest.approx(0.02)
        assert np.isnan(frame["market_total_variance"].iloc[1])

    def test_ineligible_slots_skipped(self, deterministic_bundle):
        windows = {"M1": hypercube.standard_windows()["M1"]}
        frame = hypercube.integrated_variance_table(deterministic_bundle, windows, [0.5])
        assert frame.empty

    def test_vol_cube(self, deterministic_bundle):
        windows = {k: v for k, v in hypercube.standard_windows().items() if k in ("M2", "Q1")}
        cube = hypercube.vol_cube(deterministic_bundle, windows, [0.05], [0.9, 1.0, 1.1])
        assert len(cube) == 6
        np.testing.assert_allclose(cube["iv"], 0.3, atol=1e-7)
