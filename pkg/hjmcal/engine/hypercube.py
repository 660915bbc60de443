"""Volatility hypercube: model vols across delivery windows, maturities and strikes."""

from __future__ import annotations

import logging
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from ..models import ContractKind, DeliveryWindow, ModelBundle, VsTarget
from . import lsc
from .pricer import SmilePricer

logger = logging.getLogger("hjmcal.hypercube")


def standard_windows(first_start: float = 1.0 / 12.0, days_per_year: float = 365.0) -> dict[str, DeliveryWindow]:
    """Daily, monthly, quarterly and calendar windows starting at ``first_start``."""
    day = 1.0 / days_per_year
    month = 1.0 / 12.0
    out = {"D1": DeliveryWindow(start=first_start, end=first_start + day)}
    for i in range(12):
        out[f"M{i + 1}"] = DeliveryWindow(start=first_start + i * month, end=first_start + (i + 1) * month)
    for i in range(4):
        out[f"Q{i + 1}"] = DeliveryWindow(start=first_start + 3 * i * month, end=first_start + 3 * (i + 1) * month)
    out["Cal1"] = DeliveryWindow(start=first_start, end=first_start + 1.0)
    return out


def _eligible(window: DeliveryWindow, maturity: float) -> bool:
    return 0.0 < maturity <= window.start + 1e-12


def atm_vol_table(bundle: ModelBundle, windows: Mapping[str, DeliveryWindow],
                  maturities: Sequence[float]) -> pd.DataFrame:
    rows = []
    for label, w in windows.items():
        kind = ContractKind.from_duration(w.length * 365.0).value
        for t in maturities:
            vol = np.nan
            if _eligible(w, t):
                vol = float(SmilePricer(bundle.lsc, bundle.correction, w, t, 1.0).vols([1.0], bundle)[0])
            rows.append({"window": label, "kind": kind, "start": w.start, "end": w.end, "maturity": t, "atm_vol": vol})
    return pd.DataFrame(rows)


def integrated_variance_table(bundle: ModelBundle, windows: Mapping[str, DeliveryWindow], maturities: Sequence[float],
                              targets: Optional[Sequence[VsTarget]] = None) -> pd.DataFrame:
    """Model VS total variance per (window, maturity), with market targets when they coincide."""
    market = {}
    for t in targets or []:
        market[(round(t.window.start, 10), round(t.window.end, 10), round(t.maturity, 10))] = t.total_variance
    rows = []
    for label, w in windows.items():
        for t in maturities:
            if not _eligible(w, t):
                continue
            total = lsc.integrated_covariance(bundle.lsc, w, w, 0.0, t, bundle.correction)
            key = (round(w.start, 10), round(w.end, 10), round(t, 10))
            rows.append({"window": label, "maturity": t, "model_total_variance": total,
                         "market_total_variance": market.get(key, np.nan)})
    return pd.DataFrame(rows)


def vol_cube(bundle: ModelBundle, windows: Mapping[str, DeliveryWindow], maturities: Sequence[float],
             moneyness: Sequence[float]) -> pd.DataFrame:
    """Long table (window, maturity, moneyness, iv); forward normalized to 1."""
    strikes = np.asarray(moneyness, dtype=float)
    rows = []
    for label, w in windows.items():
        for t in maturities:
            if not _eligible(w, t):
                continue
            vols = SmilePricer(bundle.lsc, bundle.correction, w, t, 1.0).vols(strikes, bundle)
            rows.extend({"window": label, "maturity": t, "moneyness": k, "iv": float(v)} for k, v in zip(strikes, vols))
    logger.info(f"Vol cube: {len(rows)} points over {len(windows)} windows")
    return pd.DataFrame(rows)
