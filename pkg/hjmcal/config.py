"""Configuration: environment variables, optional .env, optional TOML/JSON file."""

from __future__ import annotations

import json
import math
import sys
from datetime import date
from pathlib import Path
from typing import Any, Optional

from pydantic import Field
from pydantic_settings import BaseSettings

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib


class Settings(BaseSettings):
    # Paths
    data_dir: str = "data"
    quotes_file: str = "quotes.csv"
    profiles_file: str = ""  # optional per-day delivery weights
    smiles_file: str = "smiles.csv"
    output_dir: str = "output"
    ledger_path: str = "output/runs.db"
    storage_backend: str = "local"
    ledger_backend: str = "sqlite"

    # Run
    observation_date: Optional[date] = None  # defaults to the last quote date
    seed: int = 20240930
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"

    # Calendar
    days_per_year: float = Field(365.0, gt=0)  # ACT/365 maturities and delivery times
    business_days_per_year: float = Field(252.0, gt=0)  # covariance annualization
    profile_days_per_year: float = Field(365.25, gt=0)  # base-load profile day count

    # Stripping
    strip_horizon_days: int = Field(1100, ge=1)
    strip_nonnegative: bool = False
    strip_tolerance: float = Field(1e-10, gt=0)

    # Rolling contracts and covariance
    rolling_specs: list[tuple[int, int]] = [
        (0, 30), (30, 60), (60, 90), (90, 120), (120, 150), (150, 180),
        (180, 270), (270, 360), (360, 450), (450, 540), (540, 630), (630, 720),
        (720, 1085),
    ]
    return_lag_days: int = Field(1, ge=1)
    clip_multiplier: float = Field(3.0, gt=0)
    covariance_spans: list[float] = [30, 60, 91, 120, 182, 252, 365]

    # Surface
    ssvi_gamma_starts: list[float] = [0.1, 0.25, 0.45]
    ssvi_binding_tolerance: float = Field(5e-3, gt=0)  # vol RMSE allowed with an active bound
    vs_log_moneyness_bound: float = Field(10.0, gt=0)
    vs_tolerance: float = Field(1e-9, gt=0)

    # Step 1 (joint historical / VS calibration)
    step1_n_slope: int = Field(2, ge=0)
    step1_n_curvature: int = Field(1, ge=0)
    step1_lambda: float = Field(0.5, ge=0.0, le=1.0)
    step1_restarts: int = Field(100, ge=1)
    step1_init_noise: float = Field(0.3, ge=0.0)
    step1_simplex_tolerance: float = Field(1e-6, gt=0)
    step1_max_outer_iterations: int = Field(2000, ge=1)
    step1_inner_solver: str = "admm"
    step1_inner_tolerance: float = Field(1e-9, gt=0)
    step1_inner_max_iterations: int = Field(50_000, ge=1)
    step1_sigma_level_multiple: float = Field(3.0, gt=0)
    step1_scan: bool = False
    step1_scan_max_slope: int = Field(3, ge=0)
    step1_scan_max_curvature: int = Field(1, ge=0)

    # Step 2 (term-structure correction)
    step2_enabled: bool = True
    step2_tolerance: float = Field(1e-10, gt=0)
    step2_max_iterations: int = Field(100, ge=1)
    step2_smooth: bool = False
    step2_grouping: str = "default"  # "default" | "all-g" | "all-h"

    # Step 3 (smile calibration)
    step3_factors: int = Field(3, ge=1)
    step3_restarts: int = Field(10, ge=1)
    step3_max_iterations: int = Field(400, ge=1)
    step3_c_bounds: tuple[float, float] = (0.0, 50.0)
    step3_x_bounds: tuple[float, float] = (1e-6, 200.0)
    step3_heston_warm_start: bool = True

    # Fourier pricing
    riccati_min_steps: int = Field(500, ge=1)
    riccati_steps_per_year: float = Field(730.0, gt=0)
    riccati_scheme: str = "exponential"
    lewis_u_cap: float = Field(400.0, gt=0)
    lewis_tolerance: float = Field(1e-12, gt=0)

    # Monte Carlo
    mc_paths: int = Field(100_000, ge=1)
    mc_step_days: float = Field(1.0, gt=0)
    mc_block_size: int = Field(4096, ge=1)

    # Reporting
    report_formats: list[str] = ["csv", "svg", "png"]
    report_maturities: list[float] = [0.25, 0.5, 1.0, 1.5]
    report_moneyness: list[float] = [0.7, 0.85, 1.0, 1.15, 1.3]

    class Config:
        env_prefix = "HJMCAL_"
        env_file = ".env"

    @property
    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir)

    @property
    def resolved_ledger_path(self) -> Path:
        return Path(self.ledger_path)

    @property
    def resolved_quotes_path(self) -> Path:
        return Path(self.data_dir) / self.quotes_file

    @property
    def resolved_smiles_path(self) -> Path:
        return Path(self.data_dir) / self.smiles_file

    @property
    def resolved_profiles_path(self) -> Optional[Path]:
        return Path(self.data_dir) / self.profiles_file if self.profiles_file else None

    @property
    def return_lag_years(self) -> float:
        return self.return_lag_days / self.business_days_per_year

    def riccati_steps(self, maturity: float) -> int:
        return max(self.riccati_min_steps, math.ceil(maturity * self.riccati_steps_per_year))


def flatten_sections(document: dict[str, Any]) -> dict[str, Any]:
    """`{"step1": {"restarts": 5}}` -> `{"step1_restarts": 5}`; top-level keys pass through."""
    flat: dict[str, Any] = {}
    for key, value in document.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                flat[f"{key}_{sub_key}"] = sub_value
        else:
            flat[key] = value
    return flat


def load_settings(path: Optional[str | Path] = None, **overrides: Any) -> Settings:
    """Build settings from a TOML/JSON file (nested sections) plus explicit overrides."""
    values: dict[str, Any] = {}
    if path:
        path = Path(path)
        text = path.read_text()
        document = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
        values.update(flatten_sections(document))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)


settings = Settings()
