"""Daily forward-curve stripping, rolling futures and historical covariances."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from ..errors import DegenerateWeights, EmptyInput, InfeasibleQuotes, NonPositivePrice, OutOfGrid
from ..models import AbsoluteQuote, RollingSpec

logger = logging.getLogger("hjmcal.curve")


@dataclass(frozen=True)
class DailyForwardCurve:
    t0: date
    values: np.ndarray  # values[l] delivers on t0 + l days

    @property
    def n_days(self) -> int:
        return len(self.values)

    @property
    def grid(self) -> list[date]:
        return [self.t0 + timedelta(days=l) for l in range(self.n_days)]

    @property
    def end(self) -> date:
        return self.t0 + timedelta(days=self.n_days)

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=pd.DatetimeIndex(self.grid, name="delivery"), name=str(self.t0))


@dataclass(frozen=True)
class CovarianceEstimate:
    c_mkt: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    spans: tuple[float, ...]
    per_span: tuple[np.ndarray, ...] = ()


# --- stripping ---

def _quote_rows(quotes: Sequence[AbsoluteQuote], t0: date, n: int) -> tuple[np.ndarray, np.ndarray, list[str]]:
    rows, prices, ids = [], [], []
    for q in quotes:
        lo = (q.start - t0).days
        hi = (q.end - t0).days
        if lo < 0:
            logger.warning(f"{q.contract_id}: delivery started before {t0}, quote ignored")
            continue
        if hi > n:
            raise OutOfGrid(f"{q.contract_id}: delivery ends after the stripping horizon")
        row = np.zeros(n)
        row[lo:hi] = q.weights()
        rows.append(row)
        prices.append(q.price)
        ids.append(q.contract_id)
    if not rows:
        raise EmptyInput(f"no deliverable quotes at {t0}")
    return np.vstack(rows), np.asarray(prices), ids


def _independent_rows(w: np.ndarray, tol: float) -> np.ndarray:
    _, r, piv = linalg.qr(w.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
    return np.sort(piv[:rank])


def _kkt_solve(n: int, w: np.ndarray, p: np.ndarray) -> np.ndarray:
    d = np.diff(np.eye(n), axis=0)
    q = 2.0 * d.T @ d
    m = len(p)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = q
    kkt[:n, n:] = w.T
    kkt[n:, :n] = w
    rhs = np.concatenate([np.zeros(n), p])
    return linalg.solve(kkt, rhs, assume_a="sym")[:n]


def strip_curve(quotes: Sequence[AbsoluteQuote], t0: date, t_bar: date,
                nonnegative: bool = False, tol: float = 1e-10) -> DailyForwardCurve:
    """Smoothest daily curve (least squared increments) replicating every quote."""
    if not quotes:
        raise EmptyInput("no quotes to strip")
    n = (t_bar - t0).days
    if n <= 0:
        raise OutOfGrid(f"horizon {t_bar} is not after {t0}")
    w, p, ids = _quote_rows(quotes, t0, n)

    s_ls, *_ = np.linalg.lstsq(w, p, rcond=None)
    resid = np.abs(w @ s_ls - p)
    bad = resid > tol * np.maximum(np.abs(p), 1.0) * 1e2
    if np.any(bad):
        raise InfeasibleQuotes(
            f"inconsistent quotes at {t0}: {[ids[i] for i in np.flatnonzero(bad)]}",
            payload={"residuals": dict(zip(ids, resid.tolist()))},
        )
    keep = _independent_rows(w, 1e-12)
    if len(keep) < len(p):
        logger.debug(f"{t0}: {len(p) - len(keep)} redundant quote(s) dropped")
    w, p = w[keep], p[keep]

    values = _kkt_solve(n, w, p)
    if nonnegative:
        active: list[int] = []
        while np.any(values < -tol):
            active.extend(np.flatnonzero(values < -tol).tolist())
            pins = np.zeros((len(active), n))
            pins[np.arange(len(active)), active] = 1.0
            wa = np.vstack([w, pins])
            pa = np.concatenate([p, np.zeros(len(active))])
            keep = _independent_rows(wa, 1e-12)
            values = _kkt_solve(n, wa[keep], pa[keep])
        values[(values < 0.0) & (values >= -tol)] = 0.0
    return DailyForwardCurve(t0=t0, values=values)


# --- rolling futures ---

def window_average(curve: DailyForwardCurve, start: date, end: date) -> float:
    """Arithmetic average over absolute delivery dates [start, end)."""
    lo = (start - curve.t0).days
    hi = (end - curve.t0).days
    if lo < 0 or hi > curve.n_days or hi <= lo:
        raise OutOfGrid(f"window {start}..{end} outside curve of {curve.t0}")
    return float(curve.values[lo:hi].mean())


def rolling_quote(curve: DailyForwardCurve, spec: RollingSpec) -> float:
    if spec.te_days > curve.n_days:
        raise OutOfGrid(f"{spec.label} exceeds curve horizon of {curve.n_days} days")
    return float(curve.values[spec.ts_days:spec.te_days].mean())


def log_return_series(curves: Sequence[DailyForwardCurve], spec: RollingSpec, lag: int = 1) -> pd.Series:
    """Log returns of a rolling contract with the delivery window held fixed over the lag.

    ``curves`` are time-ordered observation dates; ``lag`` counts observations.
    """
    dates, values = [], []
    for h in range(lag, len(curves)):
        now, before = curves[h], curves[h - lag]
        start = now.t0 + timedelta(days=spec.ts_days)
        end = now.t0 + timedelta(days=spec.te_days)
        f_now = window_average(now, start, end)
        f_before = window_average(before, start, end)
        if f_now <= 0 or f_before <= 0:
            raise NonPositivePrice(f"{spec.label}: nonpositive rolling quote around {now.t0}")
        dates.append(now.t0)
        values.append(np.log(f_now / f_before))
    return pd.Series(values, index=pd.DatetimeIndex(dates, name="date"), name=spec.label, dtype=float)


def outlier_bounds(series, k: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(series, dtype=float)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean - k * std, mean + k * std


def clip_outliers(series, k: float = 3.0, bounds: Optional[tuple[np.ndarray, np.ndarray]] = None):
    """Replace values further than k std from the mean by mean +/- k std (column-wise).

    Passing the bounds of the original series makes re-application a no-op.
    """
    lo, hi = bounds if bounds is not None else outlier_bounds(series, k)
    clipped = np.clip(np.asarray(series, dtype=float), lo, hi)
    if isinstance(series, pd.DataFrame):
        return pd.DataFrame(clipped, index=series.index, columns=series.columns)
    if isinstance(series, pd.Series):
        return pd.Series(clipped, index=series.index, name=series.name)
    return clipped


def rolling_history(curves: Sequence[DailyForwardCurve], specs: Sequence[RollingSpec],
                    lag: int = 1, k: float = 3.0) -> pd.DataFrame:
    """H x P clipped return matrix; dates with any unavailable rolling quote are dropped."""
    columns = {}
    for spec in specs:
        try:
            columns[spec.label] = log_return_series(curves, spec, lag)
        except OutOfGrid as e:
            raise OutOfGrid(f"{spec.label}: {e}") from e
    frame = pd.DataFrame(columns).dropna(how="any")
    if len(frame) < 2:
        raise EmptyInput("fewer than two return observations")
    logger.info(f"Rolling returns: {len(frame)} dates x {len(specs)} contracts")
    return clip_outliers(frame, k)


# --- covariance ---

def ewma_weights(n: int, span: float) -> np.ndarray:
    alpha = 0.0 if np.isinf(span) else 2.0 / (span + 1.0)
    w = (1.0 - alpha) ** np.arange(n - 1, -1, -1, dtype=float)
    return w / w.sum()


def ewma_covariance(returns, span: float, lag_days: int = 1, days_per_year: float = 252.0) -> np.ndarray:
    """Exponentially weighted covariance of tau_d-day log returns, annualized."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if span < 1:
        raise ValueError("span must be at least 1 day")
    w = ewma_weights(len(r), span)
    w2 = float(np.sum(w * w))
    if len(r) < 2 or w2 >= 1.0 - 1e-15:
        raise DegenerateWeights(f"sum of squared weights {w2:.3g} >= 1 with {len(r)} observations")
    centered = r - w @ r
    cov = (centered * w[:, None]).T @ centered / (1.0 - w2)
    cov = 0.5 * (cov + cov.T)
    return cov * days_per_year / lag_days


def averaged_covariance(returns, spans: Sequence[float], lag_days: int = 1,
                        days_per_year: float = 252.0) -> CovarianceEstimate:
    if not spans:
        raise ValueError("at least one span required")
    mats = [ewma_covariance(returns, s, lag_days, days_per_year) for s in spans]
    stack = np.stack(mats)
    c_mkt = stack.mean(axis=0)
    u = stack.std(axis=0)
    u_bar = float(u.mean())
    if u_bar == 0.0:
        gamma = np.ones_like(c_mkt)
    else:
        gamma = 1.0 / (u_bar + u)
        gamma /= gamma.mean()
    return CovarianceEstimate(c_mkt=c_mkt, u=u, gamma=gamma, spans=tuple(spans), per_span=tuple(mats))


def pca_explained_variance(returns) -> np.ndarray:
    """Cumulative explained-variance ratios (nondecreasing, ends at 1)."""
    r = np.asarray(returns, dtype=float)
    eig = np.clip(np.linalg.eigvalsh(np.cov(r, rowvar=False)), 0.0, None)[::-1]
    total = eig.sum()
    if total <= 0:
        return np.ones(r.shape[1])
    out = np.cumsum(eig) / total
    out[-1] = 1.0
    return np.minimum(out, 1.0)
