import pytest

from hjmcal import dataio, synthetic
from hjmcal.config import Settings
from hjmcal.errors import PipelineStepError
from hjmcal.models import RunStatus
from hjmcal.pipeline import CalibrationPipeline, compute_run_id, run_pipeline, step_seed


@pytest.fixture
def market_dir(tmp_path):
    data = tmp_path / "data"
    config = synthetic.SyntheticConfig(
        truth=synthetic.default_truth(), history_days=60, horizon_days=400,
        smile_months=0, smile_quarters=0, smile_calendars=0,
    )
    synthetic.generate_synthetic(config, seed=5, out_dir=data)
    return data


@pytest.fixture
def config(market_dir, tmp_path) -> Settings:
    return Settings(
        data_dir=str(market_dir),
        smiles_file="missing.csv",
        output_dir=str(tmp_path / "out"),
        ledger_path=str(tmp_path / "out" / "runs.db"),
        rolling_specs=[(30, 60), (60, 90), (90, 180), (180, 365)],
        strip_horizon_days=400,
        covariance_spans=[10, 20, 40],
        step1_n_slope=0,
        step1_n_curvature=0,
        step1_restarts=1,
        report_formats=["csv"],
        report_maturities=[0.25],
    )


class TestRunId:
    def test_stable_and_input_sensitive(self, config):
        run_id = compute_run_id(config)
        assert run_id.startswith("run_") and len(run_id) == 16
        assert compute_run_id(config.model_copy(update={"workers": 4})) == run_id
        assert compute_run_id(config.model_copy(update={"seed": 1})) != run_id

    def test_quotes_change_run_id(self, config, market_dir):
        before = compute_run_id(config)
        with open(market_dir / "quotes.csv", "a") as fh:
            fh.write("2024-09-30,X,2026-01-01,2026-02-01,50\n")
        assert compute_run_id(config) != before

    def test_step_seeds_differ(self):
        assert step_seed(1, 1) != step_seed(1, 3)
        assert step_seed(1, 1) == step_seed(1, 1)


class TestPipeline:
    def test_end_to_end_without_smiles(self, config):
        pipe = run_pipeline(config)
        summary = pipe.summary()
        assert summary["model"] == "1L0S0C"
        assert summary["step2"] is False
        assert summary["heston_factors"] == 1
        assert pipe.state.bundle.correction.h_is_identity

        run = pipe.ledger.get_run(pipe.run_id)
        assert run.status is RunStatus.completed
        assert run.steps_completed == 5
        for name in ("curves.csv", "covariance.json", "step1.json", "bundle.json", "report/covariance_fit.csv"):
            assert pipe.storage.exists(pipe.key(name)), name

    def test_individual_steps(self, config):
        pipe = CalibrationPipeline(config)
        pipe.begin()
        curves = pipe.strip()
        assert len(curves) == 60
        assert pipe.state.observation_date == curves[-1].t0
        cov = pipe.estimate_covariance()
        assert cov.c_mkt.shape == (4, 4)
        assert pipe.fit_surface() == []
        assert pipe.step1_problem().lam == 1.0

    def test_resume_reproduces_bundle(self, config):
        first = run_pipeline(config)
        bundle = first.storage.get(first.key("bundle.json"))
        second = run_pipeline(config, resume=True)
        assert second.run_id == first.run_id
        assert second.storage.get(second.key("bundle.json")) == bundle
        assert dataio.bundle_from_json(bundle.decode()).lsc == second.state.model

    def test_failure_recorded(self, config):
        broken = config.model_copy(update={"quotes_file": "absent.csv"})
        with pytest.raises(PipelineStepError) as err:
            run_pipeline(broken)
        assert err.value.step == "strip"
        pipe = CalibrationPipeline(broken)
        assert pipe.ledger.get_run(pipe.run_id).status is RunStatus.failed

    @pytest.mark.slow
    def test_worker_count_does_not_change_bundle(self, config, tmp_path):
        base = config.model_copy(update={"step1_n_slope": 1, "step1_restarts": 4})
        bundles = []
        for workers in (1, 8):
            out = tmp_path / f"out_{workers}"
            pipe = run_pipeline(base.model_copy(update={
                "workers": workers, "output_dir": str(out), "ledger_path": str(out / "runs.db"),
            }))
            bundles.append(pipe.storage.get(pipe.key("bundle.json")))
        assert bundles[0] == bundles[1]
