"""Fourier pricing under lifted-Heston stochastic variance.

The normalized log-price X_T = log(F_T / F_0) of a contract has an exponentially
affine moment function E[exp(v X_T)] driven by a Riccati system in
time-to-maturity; calls are priced with the Lewis formula.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import QuadratureNoConvergence
from ..models import DeliveryWindow, LiftedHestonParams, LscModel, ModelBundle, TermCorrection
from . import lsc
from .surface import implied_vol

logger = logging.getLogger("hjmcal.pricer")

SCHEMES = ("exponential", "exponential-pc", "euler")
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)


def g_function(v, psi, sigma_t: np.ndarray, h_t: float, rho_tilde: np.ndarray, corr: np.ndarray):
    """G(t, v, psi) = h^2/2 S'RS (v^2 - v) + h (S'rho) v psi + psi^2 / 2."""
    sigma_t = np.asarray(sigma_t, dtype=float)
    quad = float(sigma_t @ corr @ sigma_t)
    lev = float(sigma_t @ np.asarray(rho_tilde, dtype=float))
    return 0.5 * h_t * h_t * quad * (v * v - v) + h_t * lev * v * psi + 0.5 * psi * psi


def riccati_steps(maturity: float, min_steps: int = 500, steps_per_year: float = 730.0) -> int:
    return max(min_steps, math.ceil(maturity * steps_per_year))


@dataclass(frozen=True)
class CoefficientGrid:
    """Model coefficients on the time-to-maturity grid s_k = k T / n (calendar time T - s_k)."""
    maturity: float
    d: np.ndarray  # h^2 S'RS
    sigma: np.ndarray  # h * S, shape (n + 1, N)
    total_variance: float  # integral of d over [0, T], exact

    @property
    def n_steps(self) -> int:
        return len(self.d) - 1

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    def leverage(self, rho_tilde: np.ndarray) -> np.ndarray:
        return self.sigma @ rho_tilde


def build_coefficients(model: LscModel, correction: Optional[TermCorrection], window: DeliveryWindow,
                       maturity: float, n_steps: int) -> CoefficientGrid:
    basis = lsc.StateBasis.from_model(model)
    loads = lsc.state_loadings(basis, window, correction)
    s = np.linspace(0.0, maturity, n_steps + 1)
    t = maturity - s
    vols = lsc.kv_volatility_from_loadings(model, basis, loads, window.start, t)
    h = correction.h(t) if correction is not None else np.ones_like(t)
    scaled = vols * np.asarray(h)[:, None]
    d = np.einsum("ki,ij,kj->k", scaled, model.corr, scaled)
    total = lsc.integrated_covariance(model, window, window, 0.0, maturity, correction)
    return CoefficientGrid(maturity=maturity, d=d, sigma=scaled, total_variance=total)


@dataclass
class RiccatiSolution:
    times: np.ndarray
    psi_factors: np.ndarray  # (n_v, n + 1, M)
    psi: np.ndarray  # (n_v, n + 1)
    log_phi: np.ndarray  # (n_v,)


def _sweep(v: np.ndarray, grid: CoefficientGrid, heston: LiftedHestonParams, rho_tilde: np.ndarray,
           scheme: str = "exponential", keep_path: bool = False):
    if scheme not in SCHEMES:
        raise ValueError(f"Unknown Riccati scheme: {scheme}")
    v = np.asarray(v, dtype=complex)
    c = np.asarray(heston.c, dtype=float)
    x = np.asarray(heston.x, dtype=float)
    dt = grid.dt
    e = grid.leverage(rho_tilde)
    vv = v * v - v
    decay = np.exp(-x * dt)
    xdt = x * dt
    weight = np.where(xdt < 1e-12, dt, -np.expm1(-xdt) / np.where(x > 0, x, 1.0))

    def g_at(k: int, psi: np.ndarray) -> np.ndarray:
        return 0.5 * grid.d[k] * vv + e[k] * v * psi + 0.5 * psi * psi

    def rest(k: int, psi: np.ndarray) -> np.ndarray:
        return e[k] * v * psi + 0.5 * psi * psi

    psi_j = np.zeros((v.size, c.size), dtype=complex)
    psi = np.zeros(v.size, dtype=complex)
    acc = np.zeros(v.size, dtype=complex)
    path = [psi_j.copy()] if keep_path else None
    for k in range(grid.n_steps):
        gk = g_at(k, psi)
        if scheme == "euler":
            psi_j = psi_j + dt * (-x * psi_j + gk[:, None])
        elif scheme == "exponential":
            psi_j = decay * psi_j + weight * gk[:, None]
        else:
            pred = decay * psi_j + weight * gk[:, None]
            g1 = g_at(k + 1, pred @ c)
            psi_j = decay * psi_j + weight * (0.5 * (gk + g1))[:, None]
        new = psi_j @ c
        acc += 0.5 * dt * (rest(k, psi) + rest(k + 1, new))
        psi = new
        if keep_path:
            path.append(psi_j.copy())
    log_phi = 0.5 * vv * grid.total_variance + acc
    return log_phi, path


def solve_riccati(v, grid: CoefficientGrid, heston: LiftedHestonParams, model: LscModel,
                  scheme: str = "exponential") -> RiccatiSolution:
    rho_tilde = heston.rho_tilde(model)
    v = np.atleast_1d(np.asarray(v, dtype=complex))
    log_phi, path = _sweep(v, grid, heston, rho_tilde, scheme, keep_path=True)
    factors = np.stack(path, axis=1)
    return RiccatiSolution(
        times=np.linspace(0.0, grid.maturity, grid.n_steps + 1),
        psi_factors=factors,
        psi=factors @ np.asarray(heston.c, dtype=float),
        log_phi=log_phi,
    )


def char_function(v, grid: CoefficientGrid, bundle: ModelBundle, scheme: str = "exponential") -> np.ndarray:
    """E[(F_T / F_0)^v] for complex v with real part in [0, 1]."""
    v = np.atleast_1d(np.asarray(v, dtype=complex))
    log_phi, _ = _sweep(v, grid, bundle.heston, bundle.heston.rho_tilde(bundle.lsc), scheme)
    return np.exp(log_phi)


def lewis_call_from_grid(strikes, f0: float, grid: CoefficientGrid, bundle: ModelBundle,
                         scheme: str = "exponential", u_cap: float = 400.0, tol: float = 1e-12) -> np.ndarray:
    """Lewis formula with 64-point Gauss-Legendre panels [0,1], [1,2], [2,4], ... up to u_cap."""
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    k = np.log(f0 / strikes)
    rho_tilde = bundle.heston.rho_tilde(bundle.lsc)
    total = np.zeros(strikes.size)
    lo, hi = 0.0, 1.0
    while True:
        u = 0.5 * (hi - lo) * _NODES + 0.5 * (hi + lo)
        log_phi, _ = _sweep(1j * u + 0.5, grid, bundle.heston, rho_tilde, scheme)
        integrand = np.real(np.exp(1j * np.outer(k, u) + log_phi[None, :])) / (u * u + 0.25)[None, :]
        total += 0.5 * (hi - lo) * integrand @ _WEIGHTS
        if np.max(np.abs(integrand)) * (hi - lo) < tol:
            break
        if hi >= u_cap:
            raise QuadratureNoConvergence(
                f"Lewis integrand still {np.max(np.abs(integrand)):.3g} at u={u_cap:g} (T={grid.maturity:.4f})"
            )
        lo, hi = hi, min(2.0 * hi, u_cap)
    return f0 - np.sqrt(f0 * strikes) / np.pi * total


class SmilePricer:
    """Prices one (contract, maturity) slot; coefficients are cached across parameter sets."""

    def __init__(self, model: LscModel, correction: Optional[TermCorrection], window: DeliveryWindow,
                 maturity: float, f0: float, n_steps: Optional[int] = None, scheme: str = "exponential",
                 u_cap: float = 400.0, tol: float = 1e-12):
        self.window = window
        self.maturity = maturity
        self.f0 = f0
        self.scheme = scheme
        self.u_cap = u_cap
        self.tol = tol
        self.grid = build_coefficients(model, correction, window, maturity, n_steps or riccati_steps(maturity))

    def calls(self, strikes, bundle: ModelBundle) -> np.ndarray:
        return lewis_call_from_grid(strikes, self.f0, self.grid, bundle, self.scheme, self.u_cap, self.tol)

    def vols(self, strikes, bundle: ModelBundle) -> np.ndarray:
        strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
        prices = self.calls(strikes, bundle)
        out = np.empty(strikes.size)
        for i, (kk, p) in enumerate(zip(strikes, prices)):
            p = min(max(p, max(self.f0 - kk, 0.0)), self.f0)
            out[i] = implied_vol(p, self.f0, kk, self.maturity, call=True)
        return out


def lewis_call(strikes, maturity: float, window: DeliveryWindow, f0: float, bundle: ModelBundle,
               n_steps: Optional[int] = None, scheme: str = "exponential", u_cap: float = 400.0,
               tol: float = 1e-12) -> np.ndarray:
    pricer = SmilePricer(bundle.lsc, bundle.correction, window, maturity, f0, n_steps, scheme, u_cap, tol)
    return pricer.calls(strikes, bundle)


def lewis_put(strikes, maturity: float, window: DeliveryWindow, f0: float, bundle: ModelBundle,
              **kwargs) -> np.ndarray:
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    return lewis_call(strikes, maturity, window, f0, bundle, **kwargs) - f0 + strikes


def model_smile(strikes, maturity: float, window: DeliveryWindow, f0: float, bundle: ModelBundle,
                n_steps: Optional[int] = None, scheme: str = "exponential") -> np.ndarray:
    return SmilePricer(bundle.lsc, bundle.correction, window, maturity, f0, n_steps, scheme).vols(strikes, bundle)


def model_vs_vol(bundle: ModelBundle, window: DeliveryWindow, maturity: float) -> float:
    """Model VS volatility; independent of (c, x) since E[V_t] = 1."""
    var = lsc.integrated_covariance(bundle.lsc, window, window, 0.0, maturity, bundle.correction) / maturity
    return math.sqrt(max(var, 0.0))


def smile_table(bundle: ModelBundle, slots: Sequence[tuple[DeliveryWindow, float, float]],
                strikes: Sequence[Sequence[float]]) -> list[np.ndarray]:
    """Model vols for several (window, maturity, forward) slots."""
    return [model_smile(k, t, w, f0, bundle) for (w, t, f0), k in zip(slots, strikes)]
