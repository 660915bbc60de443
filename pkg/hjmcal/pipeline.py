"""Calibration pipeline: strip → covariance → surface → step 1 → step 2 → step 3 → report.

Each step reads only the outputs of earlier steps. Outputs are stored under the run id,
which is a hash of the input data and of every setting that can change a result, so a
rerun with the same inputs reuses (``resume=True``) or reproduces them byte for byte.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from . import dataio
from .config import Settings, settings as default_settings
from .errors import EmptyInput, PipelineStepError
from .ledger import RunLedger, create_ledger
from .models import (
    AbsoluteQuote, LiftedHestonParams, LscModel, ModelBundle, MultiSsviParams, RollingSpec, RunStatus,
    SmileQuote, TermCorrection, VsTarget,
)
from .report import ReportArtifacts, emit_report
from .storage import StorageBackend, create_storage
from .engine import calib_joint, curve, hypercube, smilefit, surface, termfit
from .engine.curve import CovarianceEstimate, DailyForwardCurve

logger = logging.getLogger("hjmcal.pipeline")

# settings that never change a result
RUNTIME_FIELDS = {"workers", "log_level", "output_dir", "ledger_path", "storage_backend", "ledger_backend",
                  "report_formats"}
STEPS = ("strip", "cov", "ssvi", "calibrate-step1", "calibrate-step2", "calibrate-step3", "report")


def _file_digest(path: Optional[Path]) -> str:
    if path is None or not path.exists():
        return ""
    return hashlib.sha256(path.read_bytes()).hexdigest()


def compute_run_id(config: Settings) -> str:
    payload = {
        "settings": json.loads(config.model_dump_json(exclude=RUNTIME_FIELDS)),
        "quotes": _file_digest(config.resolved_quotes_path),
        "profiles": _file_digest(config.resolved_profiles_path),
        "smiles": _file_digest(config.resolved_smiles_path),
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return f"run_{digest[:12]}"


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


@dataclass
class CalibrationState:
    """Everything produced so far; each field is filled by exactly one step."""
    observation_date: Optional[date] = None
    curves: list[DailyForwardCurve] = field(default_factory=list)
    returns: Optional[pd.DataFrame] = None
    covariance: Optional[CovarianceEstimate] = None
    pca: Optional[np.ndarray] = None
    smiles: list[SmileQuote] = field(default_factory=list)
    ssvi: Optional[MultiSsviParams] = None
    vs_targets: list[VsTarget] = field(default_factory=list)
    model: Optional[LscModel] = None
    step1_summary: dict[str, Any] = field(default_factory=dict)
    surface_done: bool = False
    correction: TermCorrection = field(default_factory=TermCorrection)
    step2_done: bool = False
    step2_ran: bool = False
    heston: Optional[LiftedHestonParams] = None
    bundle: Optional[ModelBundle] = None
    report_keys: list[str] = field(default_factory=list)


class CalibrationPipeline:
    def __init__(self, config: Optional[Settings] = None, storage: Optional[StorageBackend] = None,
                 ledger: Optional[RunLedger] = None, run_id: Optional[str] = None, resume: bool = False):
        self.config = config or default_settings
        self.storage = storage or create_storage(self.config)
        self.ledger = ledger or create_ledger(self.config)
        self.run_id = run_id or compute_run_id(self.config)
        self.resume = resume
        self.state = CalibrationState()
        self.steps_completed = 0

    # --- plumbing ---

    def begin(self) -> None:
        self.ledger.start(self.run_id, json.loads(self.config.model_dump_json(exclude=RUNTIME_FIELDS)))

    def key(self, name: str) -> str:
        return f"{self.run_id}/{name}"

    def _save(self, name: str, data: str | bytes, content_type: str = "text/plain") -> str:
        raw = data.encode() if isinstance(data, str) else data
        return self.storage.save(self.key(name), raw, content_type)

    def _load(self, name: str) -> Optional[bytes]:
        if not self.resume:
            return None
        return self.storage.get(self.key(name))

    @contextmanager
    def step(self, name: str, status: RunStatus, progress: str):
        self.ledger.update_status(self.run_id, status, progress=progress, steps_completed=self.steps_completed)
        logger.info(f"[{self.run_id}] {progress}")
        try:
            yield
        except PipelineStepError:
            raise
        except Exception as e:
            raise PipelineStepError(name, e) from e
        self.steps_completed += 1

    @property
    def specs(self) -> list[RollingSpec]:
        return [RollingSpec(ts_days=a, te_days=b) for a, b in self.config.rolling_specs]

    # --- step 0: stripping ---

    def strip(self) -> list[DailyForwardCurve]:
        s = self.state
        if s.curves:
            return s.curves
        cfg = self.config
        with self.step("strip", RunStatus.stripping, "Stripping daily forward curves..."):
            cached = self._load("curves.csv")
            quotes = dataio.read_quotes(cfg.resolved_quotes_path, cfg.resolved_profiles_path)
            if not quotes:
                raise EmptyInput("no quotes")
            t0 = cfg.observation_date or max(quotes)
            history = {d: q for d, q in quotes.items() if d <= t0}
            if not history:
                raise EmptyInput(f"no quotes on or before {t0}")
            s.observation_date = t0
            if cached is not None:
                s.curves = dataio.read_curves(io.BytesIO(cached))
            else:
                s.curves = [self._strip_one(d, q) for d, q in sorted(history.items())]
                self._save("curves.csv", dataio.frame_to_csv(dataio.curves_frame(s.curves)), "text/csv")
            logger.info(f"[{self.run_id}] Stripped {len(s.curves)} curves up to {t0}")
        return s.curves

    def _strip_one(self, t0: date, quotes: list[AbsoluteQuote]) -> DailyForwardCurve:
        cfg = self.config
        t_bar = t0 + timedelta(days=cfg.strip_horizon_days)
        return curve.strip_curve(quotes, t0, t_bar, nonnegative=cfg.strip_nonnegative, tol=cfg.strip_tolerance)

    # --- covariance ---

    def estimate_covariance(self) -> CovarianceEstimate:
        s = self.state
        if s.covariance is not None:
            return s.covariance
        cfg = self.config
        curves = self.strip()
        with self.step("cov", RunStatus.estimating_covariance, "Estimating rolling-contract covariance..."):
            cached = self._load("covariance.json")
            if cached is not None:
                doc = json.loads(cached)
                s.covariance = CovarianceEstimate(
                    c_mkt=np.array(doc["c_mkt"]), u=np.array(doc["u"]), gamma=np.array(doc["gamma"]),
                    spans=tuple(doc["spans"]),
                )
                s.pca = np.array(doc["pca"])
            else:
                s.returns = curve.rolling_history(curves, self.specs, cfg.return_lag_days, cfg.clip_multiplier)
                s.covariance = curve.averaged_covariance(s.returns, cfg.covariance_spans, cfg.return_lag_days,
                                                         cfg.business_days_per_year)
                s.pca = curve.pca_explained_variance(s.returns)
                self._save("returns.csv", dataio.frame_to_csv(s.returns, index=True), "text/csv")
                doc = {
                    "labels": [sp.label for sp in self.specs],
                    "c_mkt": s.covariance.c_mkt.tolist(), "u": s.covariance.u.tolist(),
                    "gamma": s.covariance.gamma.tolist(), "spans": list(s.covariance.spans),
                    "pca": s.pca.tolist(),
                }
                self._save("covariance.json", json.dumps(doc, indent=2), "application/json")
        return s.covariance

    # --- surface / VS targets ---

    def fit_surface(self) -> list[VsTarget]:
        s = self.state
        if s.surface_done:
            return s.vs_targets
        cfg = self.config
        self.strip()
        with self.step("ssvi", RunStatus.fitting_surface, "Fitting SSVI surface and variance swap targets..."):
            path = cfg.resolved_smiles_path
            s.smiles = dataio.read_smiles(path, s.observation_date, cfg.days_per_year) if path.exists() else []
            s.surface_done = True
            if not s.smiles:
                logger.warning(f"[{self.run_id}] No smiles available: step 1 uses covariance only, steps 2-3 skipped")
                return s.vs_targets
            cached = self._load("ssvi.json")
            if cached is not None:
                s.ssvi = MultiSsviParams.model_validate_json(cached)
            else:
                s.ssvi = surface.fit_multi_ssvi(s.smiles, cfg.ssvi_gamma_starts, cfg.ssvi_binding_tolerance)
                self._save("ssvi.json", s.ssvi.model_dump_json(indent=2), "application/json")
            cached = self._load("vs_targets.json")
            if cached is not None:
                s.vs_targets = [VsTarget.model_validate(t) for t in json.loads(cached)]
            else:
                s.vs_targets = surface.vs_targets(s.ssvi, s.smiles, cfg.vs_log_moneyness_bound, cfg.vs_tolerance)
                self._save("vs_targets.json", json.dumps([t.model_dump() for t in s.vs_targets], indent=2),
                           "application/json")
        return s.vs_targets

    # --- step 1 ---

    def step1_problem(self) -> calib_joint.Step1Problem:
        cfg = self.config
        cov = self.estimate_covariance()
        targets = self.fit_surface()
        return calib_joint.Step1Problem(
            c_mkt=cov.c_mkt, gamma=cov.gamma, specs=self.specs, vs_targets=targets,
            lam=cfg.step1_lambda if targets else 1.0, n_slope=cfg.step1_n_slope, n_curvature=cfg.step1_n_curvature,
            tau_d=cfg.return_lag_years, days_per_year=cfg.days_per_year,
            sigma_level_multiple=cfg.step1_sigma_level_multiple,
        )

    def calibrate_step1(self) -> LscModel:
        s = self.state
        if s.model is not None:
            return s.model
        cfg = self.config
        problem = self.step1_problem()
        with self.step("calibrate-step1", RunStatus.calibrating_step1,
                       f"Step 1: joint covariance / VS calibration ({cfg.step1_restarts} restarts)..."):
            cached = self._load("step1.json")
            if cached is not None:
                doc = json.loads(cached)
                s.model = LscModel.model_validate(doc["model"])
                s.step1_summary = doc["summary"]
                return s.model
            solver = calib_joint.create_inner_solver(cfg.step1_inner_solver, cfg.step1_inner_tolerance,
                                                     cfg.step1_inner_max_iterations)
            result = calib_joint.calibrate_step1(
                problem, restarts=cfg.step1_restarts, seed=step_seed(cfg.seed, 1), workers=cfg.workers,
                solver=solver, noise=cfg.step1_init_noise, xatol=cfg.step1_simplex_tolerance,
                max_iter=cfg.step1_max_outer_iterations,
            )
            s.model = result.model
            s.step1_summary = result.summary()
            doc = {"model": json.loads(result.model.model_dump_json()), "summary": s.step1_summary}
            self._save("step1.json", json.dumps(doc, indent=2), "application/json")
            if cfg.step1_scan:
                scan = calib_joint.factor_count_scan(
                    problem, cfg.step1_scan_max_slope, cfg.step1_scan_max_curvature,
                    restarts=max(1, cfg.step1_restarts // 10), seed=step_seed(cfg.seed, 1), workers=cfg.workers,
                    solver=solver,
                )
                self._save("factor_scan.csv", dataio.frame_to_csv(scan), "text/csv")
        return s.model

    # --- step 2 ---

    def calibrate_step2(self, enabled: Optional[bool] = None) -> TermCorrection:
        s = self.state
        if s.step2_done:
            return s.correction
        cfg = self.config
        model = self.calibrate_step1()
        enabled = cfg.step2_enabled if enabled is None else enabled
        s.step2_done = True
        if not enabled or not s.vs_targets:
            logger.info(f"[{self.run_id}] Step 2 skipped: g = h = 1")
            s.correction = TermCorrection.identity()
            return s.correction
        with self.step("calibrate-step2", RunStatus.calibrating_step2, "Step 2: VS term-structure correction..."):
            cached = self._load("step2.json")
            if cached is not None:
                s.correction = TermCorrection.model_validate_json(cached)
            else:
                result, grouping = termfit.calibrate_step2(
                    s.vs_targets, model, cfg.step2_grouping, cfg.step2_tolerance, cfg.step2_max_iterations,
                    cfg.step2_smooth,
                )
                s.correction = result.correction
                self._save("step2.json", s.correction.model_dump_json(indent=2), "application/json")
                self._save("step2_log.csv", dataio.frame_to_csv(result.log), "text/csv")
                self._save("step2_grouping.json", json.dumps(grouping.labels(), indent=2), "application/json")
            s.step2_ran = True
        return s.correction

    # --- step 3 ---

    def smile_problem(self) -> smilefit.SmileCalibProblem:
        cfg = self.config
        s = self.state
        rho_star = {c: s.ssvi.rho_of(c) for c in s.ssvi.contracts} if s.ssvi is not None else {}
        return smilefit.SmileCalibProblem(
            smiles=s.smiles, model=s.model, correction=s.correction, n_factors=cfg.step3_factors,
            c_bounds=tuple(cfg.step3_c_bounds), x_bounds=tuple(cfg.step3_x_bounds), rho_star=rho_star,
            scheme=cfg.riccati_scheme, min_steps=cfg.riccati_min_steps, steps_per_year=cfg.riccati_steps_per_year,
            u_cap=cfg.lewis_u_cap, tol=cfg.lewis_tolerance,
        )

    def calibrate_step3(self) -> LiftedHestonParams:
        s = self.state
        if s.heston is not None:
            return s.heston
        cfg = self.config
        model = self.calibrate_step1()
        self.calibrate_step2()
        if not s.smiles:
            s.heston = LiftedHestonParams.deterministic(model.n_factors)
            return s.heston
        with self.step("calibrate-step3", RunStatus.calibrating_step3,
                       f"Step 3: lifted-Heston smile calibration (M={cfg.step3_factors})..."):
            cached = self._load("step3.json")
            if cached is not None:
                s.heston = LiftedHestonParams.model_validate(json.loads(cached)["params"])
                return s.heston
            problem = self.smile_problem()
            seed = step_seed(cfg.seed, 3)
            warm = None
            if cfg.step3_heston_warm_start and cfg.step3_factors > 1:
                heston = smilefit.calibrate_heston(problem, restarts=max(1, cfg.step3_restarts // 2),
                                                   max_iter=cfg.step3_max_iterations, seed=seed)
                warm = heston.params
                problem.rho_star = {**problem.rho_star, **heston.rho_star}
            fit = smilefit.calibrate_smiles(problem, restarts=cfg.step3_restarts, max_iter=cfg.step3_max_iterations,
                                            seed=seed, warm_start=warm)
            s.heston = fit.params
            doc = {"params": json.loads(fit.params.model_dump_json()), "loss": fit.loss, "rho_star": fit.rho_star,
                   "evaluations": fit.evaluations}
            self._save("step3.json", json.dumps(doc, indent=2), "application/json")
            self._save("smile_fit.csv", dataio.frame_to_csv(smilefit.smile_report(problem, fit.params)), "text/csv")
        return s.heston

    # --- bundle and report ---

    def build_bundle(self) -> ModelBundle:
        s = self.state
        if s.bundle is None:
            heston = self.calibrate_step3()
            s.bundle = ModelBundle(observation_date=s.observation_date, lsc=s.model, correction=s.correction,
                                   heston=heston)
            self._save("bundle.json", dataio.bundle_to_json(s.bundle), "application/json")
        return s.bundle

    def report_artifacts(self) -> ReportArtifacts:
        cfg = self.config
        s = self.state
        bundle = self.build_bundle()
        problem = self.step1_problem()
        labels = [sp.label for sp in self.specs]
        model_cov = calib_joint.model_covariance_matrix(s.model, self.specs, problem.tau_d, problem.days_per_year)
        a = ReportArtifacts(
            title=f"{s.model.name} calibration as of {s.observation_date}",
            covariance=calib_joint.covariance_report(s.model, problem),
            market_correlation=dataio.matrix_frame(_to_correlation(s.covariance.c_mkt), labels),
            model_correlation=dataio.matrix_frame(_to_correlation(model_cov), labels),
            pca=pd.Series(s.pca, index=range(1, len(s.pca) + 1), name="cumulative_explained")
            if s.pca is not None else None,
            correction=s.correction if s.step2_ran else None,
        )
        a.tables["gamma"] = dataio.matrix_frame(s.covariance.gamma, labels)
        if s.vs_targets:
            a.vs_before = calib_joint.vs_report(s.model, s.vs_targets)
            if s.step2_ran:
                a.vs_after = calib_joint.vs_report(s.model, s.vs_targets, s.correction)
        if s.smiles:
            a.smiles = smilefit.smile_report(self.smile_problem(), bundle.heston)

        windows = hypercube.standard_windows(days_per_year=cfg.days_per_year)
        windows.update({t.contract_id: t.window for t in s.vs_targets})
        grid = np.round(np.linspace(1.0 / 52.0, 2.0, 40), 8)
        maturities = sorted(set(grid.tolist()) | {t.maturity for t in s.vs_targets})
        a.hypercube = hypercube.integrated_variance_table(bundle, windows, maturities, s.vs_targets)
        a.tables["atm_vols"] = hypercube.atm_vol_table(bundle, hypercube.standard_windows(days_per_year=cfg.days_per_year),
                                                       cfg.report_maturities)
        return a

    def report(self) -> list[str]:
        with self.step("report", RunStatus.reporting, "Emitting reports..."):
            artifacts = self.report_artifacts()
            self.state.report_keys = emit_report(artifacts, self.storage, self.config.report_formats,
                                                 prefix=self.key("report"))
        return self.state.report_keys

    def summary(self) -> dict[str, Any]:
        s = self.state
        return {
            "run_id": self.run_id,
            "observation_date": str(s.observation_date),
            "model": s.model.name if s.model else None,
            "step1": s.step1_summary,
            "step2": s.step2_ran,
            "heston_factors": s.heston.n_factors if s.heston else None,
            "bundle": self.storage.uri(self.key("bundle.json")) if s.bundle else None,
            "reports": len(s.report_keys),
        }


def _to_correlation(cov: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.diag(cov), 1e-300))
    return np.clip(cov / np.outer(d, d), -1.0, 1.0)


def run_pipeline(config: Optional[Settings] = None, storage: Optional[StorageBackend] = None,
                 ledger: Optional[RunLedger] = None, skip_step2: bool = False,
                 resume: bool = False) -> CalibrationPipeline:
    """Run every step in order; failures are recorded in the ledger and re-raised with the step label."""
    pipe = CalibrationPipeline(config, storage, ledger, resume=resume)
    run_id = pipe.run_id
    pipe.begin()
    logger.info(f"[{run_id}] Pipeline started")
    try:
        pipe.strip()
        pipe.estimate_covariance()
        pipe.fit_surface()
        pipe.calibrate_step1()
        pipe.calibrate_step2(enabled=not skip_step2 and pipe.config.step2_enabled)
        pipe.calibrate_step3()
        pipe.build_bundle()
        pipe.report()
        pipe.ledger.update_status(run_id, RunStatus.completed, result=pipe.summary(),
                                  steps_completed=pipe.steps_completed, progress="done")
        logger.info(f"[{run_id}] ✅ Completed!")
    except Exception as e:
        logger.error(f"[{run_id}] ❌ Failed: {e}\n{traceback.format_exc()}")
        pipe.ledger.update_status(run_id, RunStatus.failed, error=str(e))
        if not isinstance(e, PipelineStepError):
            raise PipelineStepError("pipeline", e) from e
        raise
    return pipe
