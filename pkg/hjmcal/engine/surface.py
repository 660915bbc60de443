"""Black-76 utilities, multi-contract SSVI and variance-swap extraction."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.stats import norm

from ..errors import DivergentIntegral, EmptyInput, InfeasibleConstraint, PriceOutOfBounds
from ..models import MultiSsviParams, SmileQuote, VsTarget

logger = logging.getLogger("hjmcal.surface")

_RHO_MAX = 0.999
_ETA_BOUNDS = (1e-8, 2.0)
_GAMMA_BOUNDS = (0.05, 0.5)


# --- Black-76 (undiscounted) ---

def _d1d2(f, k, t, sigma):
    sd = sigma * np.sqrt(t)
    d1 = (np.log(f / k) + 0.5 * sd * sd) / sd
    return d1, d1 - sd


def black_call(f, k, t, sigma):
    d1, d2 = _d1d2(f, k, t, sigma)
    return f * norm.cdf(d1) - k * norm.cdf(d2)


def black_put(f, k, t, sigma):
    d1, d2 = _d1d2(f, k, t, sigma)
    return k * norm.cdf(-d2) - f * norm.cdf(-d1)


def black_price(f, k, t, sigma, call: bool = True):
    return black_call(f, k, t, sigma) if call else black_put(f, k, t, sigma)


def black_vega(f, k, t, sigma):
    d1, _ = _d1d2(f, k, t, sigma)
    return f * norm.pdf(d1) * np.sqrt(t)


def implied_vol(price: float, f: float, k: float, t: float, call: bool = True) -> float:
    """Invert Black-76 with a bracketing root finder."""
    intrinsic = max(f - k, 0.0) if call else max(k - f, 0.0)
    upper = f if call else k
    if not (intrinsic - 1e-14 <= price <= upper + 1e-14):
        raise PriceOutOfBounds(f"price {price} outside [{intrinsic}, {upper}] for K={k}")
    if price - intrinsic <= 1e-300:
        return 0.0

    def objective(s: float) -> float:
        return float(black_price(f, k, t, s, call)) - price

    hi = 1.0
    while objective(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise PriceOutOfBounds(f"price {price} too close to the upper bound for K={k}")
    return optimize.brentq(objective, 1e-12, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


# --- SSVI ---

def ssvi_phi(theta, eta: float, gamma: float):
    theta = np.asarray(theta, dtype=float)
    return eta / (theta ** gamma * (1.0 + theta) ** (1.0 - gamma))


def ssvi_w(theta, k, rho: float, eta: float, gamma: float):
    phi = ssvi_phi(theta, eta, gamma)
    k = np.asarray(k, dtype=float)
    return 0.5 * theta * (1.0 + rho * phi * k + np.sqrt((phi * k + rho) ** 2 + 1.0 - rho * rho))


def theta_at(p: MultiSsviParams, contract: str, t: float) -> float:
    """ATM total variance: linear in T between quotes, proportional to T below, flat forward beyond."""
    ts = np.asarray(p.theta_maturities[contract], dtype=float)
    th = np.asarray(p.theta_values[contract], dtype=float)
    if t <= ts[0]:
        return float(th[0] * t / ts[0])
    if t >= ts[-1]:
        if len(ts) > 1:
            slope = (th[-1] - th[-2]) / (ts[-1] - ts[-2])
        else:
            slope = th[-1] / ts[-1]
        return float(th[-1] + slope * (t - ts[-1]))
    return float(np.interp(t, ts, th))


def ssvi_total_variance(p: MultiSsviParams, contract: str, t: float, k):
    return ssvi_w(theta_at(p, contract, t), k, p.rho_of(contract), p.eta, p.gamma)


def smile_from_ssvi(p: MultiSsviParams, contract: str, t: float, strikes, f0: float) -> np.ndarray:
    k = np.log(np.asarray(strikes, dtype=float) / f0)
    return np.sqrt(ssvi_total_variance(p, contract, t, k) / t)


def _atm_thetas(smiles: Sequence[SmileQuote]) -> dict[str, tuple[list[float], list[float]]]:
    by_contract: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for s in smiles:
        by_contract[s.contract_id].append((s.maturity, s.atm_vol() ** 2 * s.maturity))
    out = {}
    for cid, pairs in by_contract.items():
        pairs.sort()
        mats = [m for m, _ in pairs]
        thetas = np.maximum.accumulate([th for _, th in pairs])
        out[cid] = (mats, thetas.tolist())
    return out


def fit_multi_ssvi(smiles: Sequence[SmileQuote], gamma_starts: Sequence[float] = (0.1, 0.25, 0.45),
                   binding_tolerance: float = 5e-3) -> MultiSsviParams:
    """Least-squares SSVI fit across all smiles with shared (eta, gamma), ATM anchored."""
    if not smiles:
        raise EmptyInput("no smiles to fit")
    if not gamma_starts:
        raise ValueError("at least one gamma start required")
    for s in smiles:
        if len(s.strikes) < 3:
            raise EmptyInput(f"{s.label}: at least three strikes required")
    thetas = _atm_thetas(smiles)
    contracts = sorted(thetas)
    index = {c: i for i, c in enumerate(contracts)}
    n = len(contracts)

    data = []
    for s in smiles:
        theta = float(np.interp(s.maturity, *thetas[s.contract_id]))
        k = s.log_moneyness
        vols = np.asarray(s.vols)
        strikes_n = np.exp(k)
        price = black_call(1.0, strikes_n, s.maturity, vols)
        vega = np.maximum(black_vega(1.0, strikes_n, s.maturity, vols), 1e-12)
        data.append((index[s.contract_id], theta, k, s.maturity, strikes_n, price, vega))

    def residuals(z: np.ndarray) -> np.ndarray:
        rho, eta, gamma = z[:n], z[n], z[n + 1]
        out = []
        for i, theta, k, t, kn, price, vega in data:
            w = np.maximum(ssvi_w(theta, k, rho[i], eta, gamma), 1e-300)
            out.append((black_call(1.0, kn, t, np.sqrt(w / t)) - price) / vega)
        return np.concatenate(out)

    lower = np.array([-_RHO_MAX] * n + [_ETA_BOUNDS[0], _GAMMA_BOUNDS[0]])
    upper = np.array([_RHO_MAX] * n + [_ETA_BOUNDS[1], _GAMMA_BOUNDS[1]])

    def admissible(z: np.ndarray) -> bool:
        return z[n] * (1.0 + np.max(np.abs(z[:n]))) <= 2.0 + 1e-12

    best: Optional[np.ndarray] = None
    best_cost = np.inf
    for g0 in gamma_starts:
        z0 = np.concatenate([np.zeros(n), [0.5, float(np.clip(g0, *_GAMMA_BOUNDS))]])
        sol = optimize.least_squares(residuals, z0, bounds=(lower, upper), method="trf",
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
        z = sol.x
        if not admissible(z):
            z = _constrained_fit(residuals, z, n, lower, upper)
        cost = float(np.sum(residuals(z) ** 2))
        if cost < best_cost:
            best, best_cost = z, cost

    rmse = math.sqrt(best_cost / sum(len(d[2]) for d in data))
    binding = best[n] * (1.0 + np.max(np.abs(best[:n]))) > 2.0 - 1e-6
    if binding and rmse > binding_tolerance:
        raise InfeasibleConstraint(
            f"SSVI no-arbitrage bound binds with vol RMSE {rmse:.3g}",
            payload={"rho": best[:n].tolist(), "eta": float(best[n]), "gamma": float(best[n + 1])},
        )

    res = residuals(best)
    per_smile: dict[str, float] = {}
    offset = 0
    for s, d in zip(smiles, data):
        m = len(d[2])
        per_smile[s.label] = float(np.sqrt(np.mean(res[offset:offset + m] ** 2)))
        offset += m
    logger.info(f"SSVI fit: {n} contracts, eta={best[n]:.4f} gamma={best[n + 1]:.4f} rmse={rmse:.2e}")
    return MultiSsviParams(
        contracts=contracts,
        rho=best[:n].tolist(),
        eta=float(best[n]),
        gamma=float(best[n + 1]),
        theta_maturities={c: thetas[c][0] for c in contracts},
        theta_values={c: thetas[c][1] for c in contracts},
        residuals=per_smile,
    )


def _constrained_fit(residuals: Callable, z0: np.ndarray, n: int, lower, upper) -> np.ndarray:
    cons = []
    for i in range(n):
        cons.append({"type": "ineq", "fun": lambda z, i=i: 2.0 - z[n] * (1.0 + z[i])})
        cons.append({"type": "ineq", "fun": lambda z, i=i: 2.0 - z[n] * (1.0 - z[i])})
    start = z0.copy()
    start[n] = min(start[n], 2.0 / (1.0 + np.max(np.abs(start[:n]))))
    sol = optimize.minimize(lambda z: float(np.sum(residuals(z) ** 2)), start, method="SLSQP",
                            bounds=list(zip(lower, upper)), constraints=cons,
                            options={"ftol": 1e-16, "maxiter": 1000})
    return sol.x


# --- arbitrage diagnostics ---

def butterfly_scan(p: MultiSsviParams, contract: str, t: float,
                   k_grid: Optional[np.ndarray] = None) -> float:
    """Minimum discrete second strike-derivative of normalized call prices."""
    k = np.linspace(-2.0, 2.0, 801) if k_grid is None else np.asarray(k_grid)
    strikes = np.exp(k)
    vols = np.sqrt(ssvi_total_variance(p, contract, t, k) / t)
    c = black_call(1.0, strikes, t, vols)
    dk = np.diff(strikes)
    slopes = np.diff(c) / dk
    second = np.diff(slopes) / (0.5 * (dk[1:] + dk[:-1]))
    return float(second.min())


def calendar_scan(p: MultiSsviParams, contract: str, maturities: Optional[Sequence[float]] = None,
                  k_grid: Optional[np.ndarray] = None) -> float:
    """Minimum increment of total variance between consecutive maturities at fixed k."""
    k = np.linspace(-2.0, 2.0, 201) if k_grid is None else np.asarray(k_grid)
    mats = sorted(maturities or np.linspace(0.02, 2.0, 50))
    w = np.array([ssvi_total_variance(p, contract, t, k) for t in mats])
    return float(np.diff(w, axis=0).min()) if len(mats) > 1 else 0.0


# --- variance swaps ---

def vs_from_total_variance(total_variance: Callable[[np.ndarray], np.ndarray], t: float,
                           bound: float = 10.0, tol: float = 1e-9) -> tuple[float, float]:
    """Log-contract replication in k = log(K/F0); returns (VS_T, sigma_VS)."""

    def otm(k: float) -> float:
        w = float(total_variance(np.array([k]))[0])
        sigma = math.sqrt(max(w, 0.0) / t)
        strike = math.exp(k)
        price = black_put(1.0, strike, t, sigma) if k < 0 else black_call(1.0, strike, t, sigma)
        return float(price) / strike

    for edge in (-bound, bound):
        if otm(edge) > 1e-8:
            raise DivergentIntegral(f"wing integrand {otm(edge):.3g} at k={edge} is not negligible")
    left, _ = integrate.quad(otm, -bound, 0.0, epsabs=tol * 1e-3, epsrel=1e-12, limit=500)
    right, _ = integrate.quad(otm, 0.0, bound, epsabs=tol * 1e-3, epsrel=1e-12, limit=500)
    vs = 2.0 * (left + right)
    return vs, math.sqrt(max(vs, 0.0) / t)


def _smile_total_variance(smile: SmileQuote) -> Callable[[np.ndarray], np.ndarray]:
    k = smile.log_moneyness
    vols = np.asarray(smile.vols)

    def w(x: np.ndarray) -> np.ndarray:
        return np.interp(x, k, vols) ** 2 * smile.maturity

    return w


def vs_from_surface(source: MultiSsviParams | SmileQuote, t: Optional[float] = None,
                    contract: Optional[str] = None, bound: float = 10.0,
                    tol: float = 1e-9) -> tuple[float, float]:
    """VS price and vol from an SSVI surface (contract, t) or a raw smile with flat wings."""
    if isinstance(source, SmileQuote):
        return vs_from_total_variance(_smile_total_variance(source), source.maturity, bound, tol)
    if contract is None or t is None:
        raise ValueError("contract and maturity required with an SSVI surface")
    return vs_from_total_variance(lambda k: ssvi_total_variance(source, contract, t, k), t, bound, tol)


def vs_targets(p: MultiSsviParams, smiles: Sequence[SmileQuote], bound: float = 10.0,
               tol: float = 1e-9) -> list[VsTarget]:
    """Market VS variance per smile (uniform weights)."""
    out = []
    for s in smiles:
        _, vol = vs_from_surface(p, s.maturity, s.contract_id, bound, tol)
        out.append(VsTarget(contract_id=s.contract_id, window=s.window, maturity=s.maturity, variance=vol * vol))
    return out
