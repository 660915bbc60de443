from __future__ import annotations

import numpy as np
import pytest

from hjmcal.config import Settings
from hjmcal.ledger import SQLiteLedger
from hjmcal.models import DeliveryWindow, LiftedHestonParams, LscModel, ModelBundle
from hjmcal.storage import LocalStorage


@pytest.fixture
def level_model() -> LscModel:
    return LscModel.single_level(0.3)


@pytest.fixture
def slope_model() -> LscModel:
    return LscModel(
        sigma_level=0.2,
        sigma_slope=[0.8],
        tau_slope=[0.25],
        correlation=[[1.0, 0.4], [0.4, 1.0]],
    )


@pytest.fixture
def full_model() -> LscModel:
    """1L1S1C with a non-trivial correlation."""
    return LscModel(
        sigma_level=0.2,
        sigma_slope=[0.9],
        tau_slope=[0.1],
        sigma_curvature=[0.5],
        tau_curvature=[0.4],
        correlation=[[1.0, 0.3, -0.2], [0.3, 1.0, 0.1], [-0.2, 0.1, 1.0]],
    )


@pytest.fixture
def deterministic_bundle(level_model) -> ModelBundle:
    return ModelBundle(lsc=level_model, heston=LiftedHestonParams.deterministic(1))


@pytest.fixture
def heston_bundle(level_model) -> ModelBundle:
    return ModelBundle(lsc=level_model, heston=LiftedHestonParams(c=[1.0], x=[2.0], rho_hat=[-0.5]))


@pytest.fixture
def quarter() -> DeliveryWindow:
    return DeliveryWindow(start=0.25, end=0.5)


@pytest.fixture
def tmp_settings(tmp_path) -> Settings:
    return Settings(
        data_dir=str(tmp_path / "data"),
        output_dir=str(tmp_path / "out"),
        ledger_path=str(tmp_path / "out" / "runs.db"),
    )


@pytest.fixture
def storage(tmp_path) -> LocalStorage:
    return LocalStorage(tmp_path / "store")


@pytest.fixture
def ledger(tmp_path) -> SQLiteLedger:
    return SQLiteLedger(str(tmp_path / "runs.db"))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(7)
