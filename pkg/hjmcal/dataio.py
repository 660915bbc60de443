"""CSV ingestion and artifact serialization.

Quotes CSV: observation_date, contract_id, start, end, price (end exclusive).
Profiles CSV (optional): contract_id, day, weight.
Smiles CSV: contract_id, delivery_start, delivery_end, expiry, forward, strike, vol.
"""

from __future__ import annotations

import logging
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, EmptyInput
from .models import SCHEMA_VERSION, AbsoluteQuote, DeliveryWindow, ModelBundle, SmileQuote
from .engine.curve import DailyForwardCurve

logger = logging.getLogger("hjmcal.dataio")

QUOTE_COLUMNS = ["observation_date", "contract_id", "start", "end", "price"]
SMILE_COLUMNS = ["contract_id", "delivery_start", "delivery_end", "expiry", "forward", "strike", "vol"]
FLOAT_FORMAT = "%.17g"


def _require(frame: pd.DataFrame, columns: Sequence[str], what: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{what}: missing column(s) {missing}")
    if frame.empty:
        raise EmptyInput(f"{what}: no rows")


def _to_date(values) -> pd.Series:
    return pd.to_datetime(values).dt.date


def read_quotes(path: str | Path, profiles: Optional[str | Path] = None) -> dict[date, list[AbsoluteQuote]]:
    """Absolute futures quotes grouped by observation date (ascending)."""
    frame = pd.read_csv(path)
    _require(frame, QUOTE_COLUMNS, str(path))
    for col in ("observation_date", "start", "end"):
        frame[col] = _to_date(frame[col])
    weights: dict[str, list[float]] = {}
    if profiles:
        prof = pd.read_csv(profiles)
        _require(prof, ["contract_id", "day", "weight"], str(profiles))
        for cid, group in prof.sort_values(["contract_id", "day"]).groupby("contract_id"):
            weights[str(cid)] = group["weight"].astype(float).tolist()
    out: dict[date, list[AbsoluteQuote]] = {}
    for t0, group in frame.sort_values(["observation_date", "start", "end"]).groupby("observation_date"):
        out[t0] = [
            AbsoluteQuote(contract_id=str(r.contract_id), start=r.start, end=r.end, price=float(r.price),
                          daily_weights=weights.get(str(r.contract_id)))
            for r in group.itertuples(index=False)
        ]
    logger.info(f"Loaded {len(frame)} quotes over {len(out)} observation dates from {path}")
    return out


def write_quotes(path: str | Path, quotes: dict[date, list[AbsoluteQuote]]) -> None:
    rows = [
        {"observation_date": t0.isoformat(), "contract_id": q.contract_id, "start": q.start.isoformat(),
         "end": q.end.isoformat(), "price": q.price}
        for t0, qs in sorted(quotes.items()) for q in qs
    ]
    pd.DataFrame(rows, columns=QUOTE_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_smiles(path: str | Path, t0: date, days_per_year: float = 365.0) -> list[SmileQuote]:
    """Smiles as of ``t0``; times become ACT/365 year fractions from ``t0``."""
    frame = pd.read_csv(path)
    _require(frame, SMILE_COLUMNS, str(path))
    for col in ("delivery_start", "delivery_end", "expiry"):
        frame[col] = _to_date(frame[col])
    out = []
    keys = ["contract_id", "delivery_start", "delivery_end", "expiry"]
    for (cid, start, end, expiry), group in frame.sort_values(keys + ["strike"]).groupby(keys, sort=True):
        if expiry <= t0:
            logger.warning(f"{cid}: option expiry {expiry} not after {t0}, smile ignored")
            continue
        window = DeliveryWindow(start=(start - t0).days / days_per_year, end=(end - t0).days / days_per_year)
        forwards = group["forward"].unique()
        if len(forwards) != 1:
            raise DataError(f"{cid}@{expiry}: several forwards in one smile")
        out.append(SmileQuote(
            contract_id=str(cid), window=window, forward=float(forwards[0]),
            maturity=(expiry - t0).days / days_per_year,
            strikes=group["strike"].astype(float).tolist(), vols=group["vol"].astype(float).tolist(),
        ))
    logger.info(f"Loaded {len(out)} smiles from {path}")
    return out


def smiles_frame(smiles: Iterable[SmileQuote], t0: date, days_per_year: float = 365.0) -> pd.DataFrame:
    def to_date(years: float) -> date:
        return date.fromordinal(t0.toordinal() + int(round(years * days_per_year)))

    rows = []
    for s in smiles:
        for k, v in zip(s.strikes, s.vols):
            rows.append({"contract_id": s.contract_id, "delivery_start": to_date(s.window.start).isoformat(),
                         "delivery_end": to_date(s.window.end).isoformat(), "expiry": to_date(s.maturity).isoformat(),
                         "forward": s.forward, "strike": k, "vol": v})
    return pd.DataFrame(rows, columns=SMILE_COLUMNS)


def write_smiles(path: str | Path, smiles: Iterable[SmileQuote], t0: date, days_per_year: float = 365.0) -> None:
    smiles_frame(smiles, t0, days_per_year).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def curves_frame(curves: Sequence[DailyForwardCurve]) -> pd.DataFrame:
    """Long table (observation_date, delivery, price)."""
    parts = []
    for c in curves:
        s = c.to_series()
        parts.append(pd.DataFrame({"observation_date": c.t0.isoformat(),
                                   "delivery": [d.isoformat() for d in c.grid], "price": s.to_numpy()}))
    if not parts:
        return pd.DataFrame(columns=["observation_date", "delivery", "price"])
    return pd.concat(parts, ignore_index=True)


def read_curves(path: str | Path) -> list[DailyForwardCurve]:
    frame = pd.read_csv(path)
    _require(frame, ["observation_date", "delivery", "price"], str(path))
    out = []
    for t0, group in frame.groupby("observation_date", sort=True):
        out.append(DailyForwardCurve(t0=date.fromisoformat(str(t0)),
                                     values=group.sort_values("delivery")["price"].to_numpy(dtype=float)))
    return out


def frame_to_csv(frame: pd.DataFrame, index: bool = False) -> str:
    return frame.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator="\n")


def matrix_frame(matrix: np.ndarray, labels: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame(np.asarray(matrix), index=list(labels), columns=list(labels))


# --- model bundle ---

def bundle_to_json(bundle: ModelBundle) -> str:
    return bundle.model_dump_json(indent=2)


def bundle_from_json(text: str) -> ModelBundle:
    bundle = ModelBundle.model_validate_json(text)
    if bundle.schema_version != SCHEMA_VERSION:
        raise DataError(f"unsupported model bundle schema version {bundle.schema_version} (expected {SCHEMA_VERSION})")
    return bundle


def save_bundle(path: str | Path, bundle: ModelBundle) -> None:
    Path(path).write_text(bundle_to_json(bundle))


def load_bundle(path: str | Path) -> ModelBundle:
    return bundle_from_json(Path(path).read_text())
