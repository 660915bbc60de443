"""Step 3: lifted-Heston smile calibration with spot-vol correlations as controls."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, optimize

from ..errors import PriceOutOfBounds, QuadratureNoConvergence, SolverStall
from ..models import DeliveryWindow, LiftedHestonParams, LscModel, ModelBundle, SmileQuote, TermCorrection
from . import lsc
from .pricer import SmilePricer, riccati_steps
from .surface import black_call, black_vega, implied_vol

logger = logging.getLogger("hjmcal.smilefit")

_RHO_SCALE = 0.999
HESTON_C = 1.0
HESTON_X = 0.0


def spot_vol_corr(rho_hat: Sequence[float], window: DeliveryWindow, t: float, model: LscModel,
                  correction: Optional[TermCorrection] = None) -> float:
    sigma = lsc.kv_volatility(model, correction, t, window.start, window.end)
    direction = model.cholesky().T @ sigma
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return 0.0
    return float(np.asarray(rho_hat, dtype=float) @ direction / norm)


def skew_integrals(windows: Sequence[DeliveryWindow], model: LscModel, correction: Optional[TermCorrection],
                   horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per contract: integral of L'Sigma_t over [0, horizon] and of its norm."""
    chol_t = model.cholesky().T
    basis = lsc.StateBasis.from_model(model)
    a_rows, b_vals = [], []
    for w in windows:
        loads = lsc.state_loadings(basis, w, correction)

        def integrand(t: float) -> np.ndarray:
            v = chol_t @ lsc.kv_volatility_from_loadings(model, basis, loads, w.start, np.array([t]))[0]
            return np.append(v, np.linalg.norm(v))

        value, _ = integrate.quad_vec(integrand, 0.0, horizon, epsabs=1e-13, epsrel=1e-11)
        a_rows.append(value[:-1])
        b_vals.append(value[-1])
    return np.asarray(a_rows), np.asarray(b_vals)


def rho_hat_from_integrals(rho_star: Sequence[float], a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least squares of rho_hat . a_i = rho*_i b_i over the unit ball."""
    y = np.asarray(rho_star, dtype=float) * b
    sol, *_ = np.linalg.lstsq(a, y, rcond=None)
    if np.linalg.norm(sol) <= 1.0:
        return sol
    ata, aty = a.T @ a, a.T @ y
    eye = np.eye(len(ata))

    def excess(mu: float) -> float:
        return float(np.linalg.norm(np.linalg.solve(ata + mu * eye, aty))) - 1.0

    lo = 0.0 if np.linalg.matrix_rank(ata) == len(ata) else 1e-14
    hi = max(1.0, float(np.linalg.norm(aty)))
    while excess(hi) > 0:
        hi *= 2.0
    mu = optimize.brentq(excess, lo, hi, xtol=1e-15, rtol=1e-14)
    out = np.linalg.solve(ata + mu * eye, aty)
    return out / max(1.0, float(np.linalg.norm(out)))


def rho_hat_from_targets(rho_star: Sequence[float], windows: Sequence[DeliveryWindow], model: LscModel,
                         correction: Optional[TermCorrection], horizon: float) -> np.ndarray:
    a, b = skew_integrals(windows, model, correction, horizon)
    rho = rho_hat_from_integrals(rho_star, a, b)
    if abs(np.linalg.norm(rho) - 1.0) < 1e-9:
        logger.warning("spot-vol correlation targets are not attainable; rho_hat projected onto the unit sphere")
    return rho


# --- problem ---

@dataclass
class SmileCalibProblem:
    smiles: list[SmileQuote]
    model: LscModel
    correction: TermCorrection
    n_factors: int = 3
    c_bounds: tuple[float, float] = (0.0, 50.0)
    x_bounds: tuple[float, float] = (1e-6, 200.0)
    rho_star: dict[str, float] = field(default_factory=dict)
    n_steps: Optional[int] = None
    scheme: str = "exponential"
    min_steps: int = 500
    steps_per_year: float = 730.0
    u_cap: float = 400.0
    tol: float = 1e-12

    def __post_init__(self):
        if not self.smiles:
            raise ValueError("at least one smile required")
        self.contracts = sorted({s.contract_id for s in self.smiles})
        windows = {s.contract_id: s.window for s in self.smiles}
        self.windows = [windows[c] for c in self.contracts]
        self.horizon = max(s.maturity for s in self.smiles)
        self._a, self._b = skew_integrals(self.windows, self.model, self.correction, self.horizon)
        self._pricers = [
            SmilePricer(self.model, self.correction, s.window, s.maturity, s.forward,
                        self.n_steps or riccati_steps(s.maturity, self.min_steps, self.steps_per_year),
                        self.scheme, self.u_cap, self.tol)
            for s in self.smiles
        ]
        self._market = []
        for s in self.smiles:
            k = np.asarray(s.strikes)
            vols = np.asarray(s.vols)
            self._market.append((k, black_call(s.forward, k, s.maturity, vols),
                                 np.maximum(black_vega(s.forward, k, s.maturity, vols), 1e-12)))

    def initial_rho_star(self) -> np.ndarray:
        return np.array([self.rho_star.get(c, 0.0) for c in self.contracts])

    def rho_hat(self, rho_star: Sequence[float]) -> np.ndarray:
        return rho_hat_from_integrals(rho_star, self._a, self._b)

    def bundle(self, params: LiftedHestonParams) -> ModelBundle:
        return ModelBundle(lsc=self.model, correction=self.correction, heston=params)

    def residuals(self, params: LiftedHestonParams) -> np.ndarray:
        bundle = self.bundle(params)
        out = []
        for pricer, (k, price, vega) in zip(self._pricers, self._market):
            out.append((price - pricer.calls(k, bundle)) / vega)
        return np.concatenate(out)

    def loss(self, params: LiftedHestonParams) -> float:
        return float(np.sum(self.residuals(params) ** 2))

    def model_vols(self, params: LiftedHestonParams) -> list[np.ndarray]:
        bundle = self.bundle(params)
        return [pricer.vols(k, bundle) for pricer, (k, _, _) in zip(self._pricers, self._market)]


@dataclass
class SmileFitResult:
    params: LiftedHestonParams
    loss: float
    rho_star: dict[str, float]
    restarts: int
    evaluations: int
    history: list[float] = field(default_factory=list)


def _unpack(z: np.ndarray, problem: SmileCalibProblem, m: int) -> tuple[LiftedHestonParams, np.ndarray]:
    c = np.clip(np.exp(z[:m]), *problem.c_bounds)
    x = np.clip(np.exp(z[m:2 * m]), *problem.x_bounds)
    rho_star = _RHO_SCALE * np.tanh(z[2 * m:])
    rho_hat = problem.rho_hat(rho_star)
    return LiftedHestonParams(c=c.tolist(), x=x.tolist(), rho_hat=rho_hat.tolist()), rho_star


def _pack(c: Sequence[float], x: Sequence[float], rho_star: Sequence[float]) -> np.ndarray:
    c = np.maximum(np.asarray(c, dtype=float), 1e-8)
    rho = np.clip(np.asarray(rho_star, dtype=float) / _RHO_SCALE, -0.999999, 0.999999)
    return np.concatenate([np.log(c), np.log(np.asarray(x, dtype=float)), np.arctanh(rho)])


def embed_params(params: LiftedHestonParams, n_factors: int, x_bounds: tuple[float, float] = (1e-6, 200.0)) -> tuple[list[float], list[float]]:
    """Extend a one-factor fit with lightly weighted faster factors."""
    c = [params.c[0]] + [1e-3] * (n_factors - 1)
    x0 = max(params.x[0], x_bounds[0])
    x = [x0] + [min(max(x0, 1.0) * 5.0 ** (i + 1), x_bounds[1]) for i in range(n_factors - 1)]
    return c, x


def _objective(z: np.ndarray, problem: SmileCalibProblem, m: int) -> float:
    params, _ = _unpack(z, problem, m)
    try:
        return problem.loss(params)
    except (PriceOutOfBounds, QuadratureNoConvergence, FloatingPointError):
        return 1e10


def calibrate_smiles(problem: SmileCalibProblem, restarts: int = 10, max_iter: int = 400, seed: int = 0,
                     warm_start: Optional[LiftedHestonParams] = None) -> SmileFitResult:
    m = problem.n_factors
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rho0 = problem.initial_rho_star()
    starts = []
    if warm_start is not None:
        if warm_start.n_factors == m:
            c0, x0 = warm_start.c, warm_start.x
        else:
            c0, x0 = embed_params(warm_start, m, problem.x_bounds)
        starts.append(_pack(c0, x0, rho0))
    starts.append(_pack([1.0] * m, np.geomspace(0.5, 20.0, m) if m > 1 else [2.0], rho0))
    while len(starts) < restarts:
        c0 = np.exp(rng.uniform(np.log(0.05), np.log(5.0), m))
        x0 = np.sort(np.exp(rng.uniform(np.log(1e-3), np.log(50.0), m)))
        r0 = np.clip(rho0 + 0.2 * rng.standard_normal(rho0.size), -0.95, 0.95)
        starts.append(_pack(c0, x0, r0))

    best_z, best_loss, evaluations, history = None, math.inf, 0, []
    for z0 in starts[:max(restarts, 1)]:
        res = optimize.minimize(_objective, z0, args=(problem, m), method="Nelder-Mead",
                                options={"adaptive": True, "maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-14})
        evaluations += int(res.nfev)
        history.append(float(res.fun))
        if res.fun < best_loss:
            best_z, best_loss = res.x, float(res.fun)
    if best_z is None or not np.isfinite(best_loss) or best_loss >= 1e10:
        raise SolverStall("smile calibration found no admissible parameters", payload={"history": history})

    params, rho_star = _unpack(best_z, problem, m)
    params = params.canonical()
    logger.info(f"Step 3 M={m}: loss={best_loss:.6g} after {evaluations} evaluations")
    return SmileFitResult(params=params, loss=best_loss, rho_star=dict(zip(problem.contracts, rho_star.tolist())),
                          restarts=len(history), evaluations=evaluations, history=history)


def heston_params(problem: SmileCalibProblem, rho_star: Sequence[float]) -> LiftedHestonParams:
    """One-factor restriction c = 1, x = 0 for the given spot-vol correlations."""
    return LiftedHestonParams(c=[HESTON_C], x=[HESTON_X], rho_hat=problem.rho_hat(rho_star).tolist())


def calibrate_heston(problem: SmileCalibProblem, restarts: int = 5, max_iter: int = 400, seed: int = 0) -> SmileFitResult:
    """Classic Heston reduction (M = 1, c = 1, x = 0, V0 = theta = 1); only rho* is fitted."""
    one = SmileCalibProblem(
        smiles=problem.smiles, model=problem.model, correction=problem.correction, n_factors=1,
        c_bounds=problem.c_bounds, x_bounds=problem.x_bounds, rho_star=problem.rho_star,
        n_steps=problem.n_steps, scheme=problem.scheme, min_steps=problem.min_steps,
        steps_per_year=problem.steps_per_year, u_cap=problem.u_cap, tol=problem.tol,
    )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rho0 = one.initial_rho_star()
    starts = [rho0] + [np.clip(rho0 + 0.3 * rng.standard_normal(rho0.size), -0.95, 0.95) for _ in range(restarts - 1)]

    def objective(z: np.ndarray) -> float:
        try:
            return one.loss(heston_params(one, _RHO_SCALE * np.tanh(z)))
        except (PriceOutOfBounds, QuadratureNoConvergence, FloatingPointError):
            return 1e10

    best_z, best_loss, evaluations, history = None, math.inf, 0, []
    for r0 in starts:
        z0 = np.arctanh(np.clip(r0 / _RHO_SCALE, -0.999999, 0.999999))
        res = optimize.minimize(objective, z0, method="Nelder-Mead",
                                options={"adaptive": True, "maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-14})
        evaluations += int(res.nfev)
        history.append(float(res.fun))
        if res.fun < best_loss:
            best_z, best_loss = res.x, float(res.fun)
    if best_z is None or best_loss >= 1e10:
        raise SolverStall("Heston restriction found no admissible correlations", payload={"history": history})

    rho_star = _RHO_SCALE * np.tanh(best_z)
    logger.info(f"Step 3 Heston restriction: loss={best_loss:.6g} after {evaluations} evaluations")
    return SmileFitResult(params=heston_params(one, rho_star), loss=best_loss,
                          rho_star=dict(zip(one.contracts, rho_star.tolist())),
                          restarts=len(history), evaluations=evaluations, history=history)


def smile_report(problem: SmileCalibProblem, params: LiftedHestonParams) -> pd.DataFrame:
    rows = []
    for smile, vols in zip(problem.smiles, problem.model_vols(params)):
        for k, mkt, mdl in zip(smile.strikes, smile.vols, vols):
            rows.append({"smile": smile.label, "contract": smile.contract_id, "maturity": smile.maturity,
                         "strike": k, "market_iv": mkt, "model_iv": float(mdl), "iv_error": float(mdl) - mkt})
    return pd.DataFrame(rows)


def implied_smile(prices: Sequence[float], strikes: Sequence[float], f0: float, maturity: float) -> np.ndarray:
    return np.array([implied_vol(p, f0, k, maturity) for p, k in zip(prices, strikes)])
