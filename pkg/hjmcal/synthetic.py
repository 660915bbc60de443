"""Synthetic market generator: curve histories, exchange quotes and option smiles from a known model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .models import AbsoluteQuote, DeliveryWindow, LiftedHestonParams, LscModel, ModelBundle, SmileQuote
from .engine import lsc, montecarlo
from .engine.curve import DailyForwardCurve
from .engine.pricer import SmilePricer
from . import dataio

logger = logging.getLogger("hjmcal.synthetic")


class SyntheticConfig(BaseModel):
    truth: ModelBundle
    observation_date: date = date(2024, 9, 30)
    history_days: int = Field(400, ge=3)  # business-day observations
    horizon_days: int = Field(1100, ge=60)
    base_price: float = Field(80.0, gt=0)
    seasonal_amplitude: float = Field(0.15, ge=0.0, lt=1.0)
    price_noise: float = Field(0.0, ge=0.0)  # relative, on quotes
    vol_noise: float = Field(0.0, ge=0.0)  # absolute, on implied vols
    smile_moneyness: list[float] = [0.7, 0.85, 1.0, 1.15, 1.3]
    smile_months: int = Field(3, ge=0)
    smile_quarters: int = Field(2, ge=0)
    smile_calendars: int = Field(1, ge=0)
    expiry_lead_days: int = Field(3, ge=1)
    days_per_year: float = 365.0
    n_steps: Optional[int] = None  # Riccati steps for smile pricing


def default_truth() -> ModelBundle:
    """A 1L2S0C factor model with a three-factor lifted Heston block."""
    model = LscModel(
        sigma_level=0.25,
        sigma_slope=[0.9, 0.45],
        tau_slope=[0.08, 0.5],
        correlation=[[1.0, 0.3, 0.5], [0.3, 1.0, 0.6], [0.5, 0.6, 1.0]],
    )
    heston = LiftedHestonParams(c=[0.8, 0.6, 1.5], x=[0.5, 5.0, 30.0], rho_hat=[0.2, -0.3, 0.1])
    return ModelBundle(lsc=model, heston=heston)


@dataclass
class SyntheticMarket:
    curves: list[DailyForwardCurve]
    quotes: dict[date, list[AbsoluteQuote]]
    smiles: list[SmileQuote]
    truth: ModelBundle


# --- product calendar ---

def _add_months(d: date, n: int) -> date:
    m = d.month - 1 + n
    return date(d.year + m // 12, m % 12 + 1, 1)


def _label(start: date, months: int) -> str:
    if months == 1:
        return f"M {start:%b %y}"
    if months == 3:
        return f"Q{(start.month - 1) // 3 + 1} {start:%y}"
    return f"Cal {start:%y}"


def product_schedule(t: date, last: date) -> list[tuple[str, date, date]]:
    """Non-overlapping listed products after t: three months, quarters to a year end, then calendars."""
    out = []
    cursor = _add_months(t, 1)
    for _ in range(3):
        nxt = _add_months(cursor, 1)
        out.append((_label(cursor, 1), cursor, nxt))
        cursor = nxt
    while (cursor.month - 1) % 3:
        nxt = _add_months(cursor, 1)
        out.append((_label(cursor, 1), cursor, nxt))
        cursor = nxt
    quarters = 0
    while cursor.month != 1 or quarters < 2:
        nxt = _add_months(cursor, 3)
        out.append((_label(cursor, 3), cursor, nxt))
        cursor, quarters = nxt, quarters + 1
    while _add_months(cursor, 12) <= last:
        nxt = _add_months(cursor, 12)
        out.append((_label(cursor, 12), cursor, nxt))
        cursor = nxt
    return [p for p in out if p[2] <= last]


# --- curve history ---

def _seasonal_curve(days: list[date], base: float, amplitude: float) -> np.ndarray:
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    return np.log(base * (1.0 + amplitude * np.cos(2.0 * np.pi * (doy - 15.0) / 365.25)))


def observation_dates(t0: date, n: int) -> list[date]:
    """The ``n`` business days ending on ``t0`` (``t0`` itself kept even on a weekend)."""
    days = [d.date() for d in pd.bdate_range(end=t0, periods=n)]
    if days[-1] != t0:
        days = days[1:] + [t0]
    return days


def simulate_history(config: SyntheticConfig, rng: np.random.Generator) -> list[DailyForwardCurve]:
    """Curves on a business-day grid under the truth's stochastic-volatility factor model.

    Model time advances by the calendar days between observations, so delivery roll-down
    and diffusion share one clock. The term corrections g and h are held at 1 over the
    history; they only shape the option surface on the observation date.
    """
    bundle = config.truth
    model = bundle.lsc
    heston = bundle.heston
    dates = observation_dates(config.observation_date, config.history_days)
    first = dates[0]
    n_grid = (config.observation_date + timedelta(days=config.horizon_days) - first).days
    delivery = [first + timedelta(days=i) for i in range(n_grid)]
    log_f = _seasonal_curve(delivery, config.base_price, config.seasonal_amplitude)
    chol = model.cholesky()
    corr = model.corr
    n_f = model.n_factors
    rho_hat = np.asarray(heston.rho_hat, dtype=float)
    rho_perp = math.sqrt(max(0.0, 1.0 - float(rho_hat @ rho_hat)))
    c = np.asarray(heston.c, dtype=float)
    mean_rev = np.asarray(heston.x, dtype=float)
    offsets = np.arange(n_grid, dtype=float)

    u = np.zeros((1, len(c)))
    v = 1.0
    floored = 0
    curves = []
    for k, d in enumerate(dates):
        day = (d - first).days
        if k > 0:
            dt = (d - dates[k - 1]).days / config.days_per_year
            sq = math.sqrt(dt)
            ttd = np.maximum(offsets - day, 0.0) / config.days_per_year
            shapes = lsc.factor_shapes(model, 0.0, ttd)
            z = rng.standard_normal(n_f + 1)
            drift = -0.5 * v * np.einsum("gi,ij,gj->g", shapes, corr, shapes) * dt
            log_f = log_f + drift + math.sqrt(v) * sq * (shapes @ (chol @ z[:n_f]))
            db = np.array([sq * (z[:n_f] @ rho_hat + rho_perp * z[n_f])])
            u, raw = montecarlo.variance_step(u, np.array([math.sqrt(v)]), db, c, mean_rev, dt)
            floored += int(raw[0] < 0.0)
            v = max(float(raw[0]), 0.0)
        curves.append(DailyForwardCurve(t0=d, values=np.exp(log_f[day:day + config.horizon_days])))
    if floored:
        logger.debug(f"History variance floored at zero on {floored} of {len(dates) - 1} steps")
    return curves


def quote_history(curves: list[DailyForwardCurve], price_noise: float, rng: np.random.Generator) -> dict[date, list[AbsoluteQuote]]:
    out = {}
    for curve in curves:
        quotes = []
        for cid, start, end in product_schedule(curve.t0, curve.end):
            lo, hi = (start - curve.t0).days, (end - curve.t0).days
            price = float(curve.values[lo:hi].mean())
            if price_noise:
                price *= 1.0 + price_noise * rng.standard_normal()
            quotes.append(AbsoluteQuote(contract_id=cid, start=start, end=end, price=price))
        out[curve.t0] = quotes
    return out


# --- smiles ---

def smile_slots(config: SyntheticConfig, curve: DailyForwardCurve) -> list[tuple[str, DeliveryWindow, float, float]]:
    """(contract, window, maturity, forward): expiry a few days before delivery plus a mid-life expiry."""
    t0 = config.observation_date
    dpy = config.days_per_year
    schedule = product_schedule(t0, curve.end)
    chosen = ([p for p in schedule if p[0].startswith("M ")][:config.smile_months]
              + [p for p in schedule if p[0].startswith("Q")][:config.smile_quarters]
              + [p for p in schedule if p[0].startswith("Cal")][:config.smile_calendars])
    out = []
    for cid, start, end in chosen:
        lo, hi = (start - t0).days, (end - t0).days
        forward = float(curve.values[lo:hi].mean())
        window = DeliveryWindow(start=lo / dpy, end=hi / dpy)
        expiry_days = lo - config.expiry_lead_days
        days = [expiry_days // 2, expiry_days] if expiry_days // 2 >= 14 else [expiry_days]
        for d in days:
            if d > 0:
                out.append((cid, window, d / dpy, forward))
    return out


def price_smiles(config: SyntheticConfig, curve: DailyForwardCurve, rng: np.random.Generator) -> list[SmileQuote]:
    bundle = config.truth
    out = []
    for cid, window, maturity, forward in smile_slots(config, curve):
        strikes = forward * np.asarray(config.smile_moneyness, dtype=float)
        pricer = SmilePricer(bundle.lsc, bundle.correction, window, maturity, forward, config.n_steps)
        vols = pricer.vols(strikes, bundle)
        if config.vol_noise:
            vols = np.maximum(vols + config.vol_noise * rng.standard_normal(vols.size), 1e-3)
        out.append(SmileQuote(contract_id=cid, window=window, forward=forward, maturity=maturity,
                              strikes=strikes.tolist(), vols=vols.tolist()))
    return out


def generate_synthetic(config: SyntheticConfig, seed: int, out_dir: Optional[str | Path] = None) -> SyntheticMarket:
    """Build the market; with ``out_dir`` write quotes.csv, smiles.csv and truth.json."""
    history_seq, quote_seq, smile_seq = np.random.SeedSequence(seed).spawn(3)
    curves = simulate_history(config, np.random.default_rng(history_seq))
    quotes = quote_history(curves, config.price_noise, np.random.default_rng(quote_seq))
    smiles = price_smiles(config, curves[-1], np.random.default_rng(smile_seq))
    truth = config.truth.model_copy(update={"observation_date": config.observation_date})
    logger.info(f"Synthetic market: {len(curves)} dates, {sum(len(q) for q in quotes.values())} quotes, {len(smiles)} smiles")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dataio.write_quotes(out / "quotes.csv", quotes)
        dataio.write_smiles(out / "smiles.csv", smiles, config.observation_date, config.days_per_year)
        dataio.save_bundle(out / "truth.json", truth)
    return SyntheticMarket(curves=curves, quotes=quotes, smiles=smiles, truth=truth)
