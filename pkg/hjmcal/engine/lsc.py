"""Level / slope / curvature factor algebra.

Each factor volatility sigma(t, T) is separable into state variables
a_X(t) b_X(T) with a_X(t) = q_X(t) exp(t / tau) and b_X(T) decaying like
exp(-T / tau). Products of a-values overflow for small tau, so every integral
is evaluated in the combined form exp(r (t - Ts)) which stays below one for
t <= Ts. Loadings returned by :func:`state_loadings` carry the factor
exp(Ts / tau) so that they are O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from ..models import DeliveryWindow, LscModel, RollingSpec, TermCorrection

_SERIES_TERMS = 30


class StateKind(str, Enum):
    level = "L"
    slope = "S"
    curv1 = "C1"
    curv2 = "C2"


@dataclass(frozen=True)
class StateBasis:
    """State variables ordered (L, S_1..S_Ns, (C1_j, C2_j) pairs)."""
    kinds: tuple[StateKind, ...]
    taus: np.ndarray
    factor_of_state: np.ndarray
    n_factors: int

    @classmethod
    def from_counts(cls, tau_slope: Sequence[float], tau_curvature: Sequence[float]) -> "StateBasis":
        kinds = [StateKind.level]
        taus = [np.inf]
        factors = [0]
        for i, tau in enumerate(tau_slope):
            kinds.append(StateKind.slope)
            taus.append(float(tau))
            factors.append(1 + i)
        for j, tau in enumerate(tau_curvature):
            f = 1 + len(tau_slope) + j
            kinds += [StateKind.curv1, StateKind.curv2]
            taus += [float(tau), float(tau)]
            factors += [f, f]
        return cls(
            kinds=tuple(kinds),
            taus=np.asarray(taus, dtype=float),
            factor_of_state=np.asarray(factors, dtype=int),
            n_factors=1 + len(tau_slope) + len(tau_curvature),
        )

    @classmethod
    def from_model(cls, model: LscModel) -> "StateBasis":
        return cls.from_counts(model.tau_slope, model.tau_curvature)

    @property
    def size(self) -> int:
        return len(self.kinds)

    @property
    def rates(self) -> np.ndarray:
        return np.where(np.isinf(self.taus), 0.0, 1.0 / self.taus)

    @property
    def lift(self) -> np.ndarray:
        """E with x_state = E X_factor E^T."""
        e = np.zeros((self.size, self.n_factors))
        e[np.arange(self.size), self.factor_of_state] = 1.0
        return e

    @property
    def curvature_pairs(self) -> list[tuple[int, int]]:
        return [(s, s + 1) for s, kind in enumerate(self.kinds) if kind is StateKind.curv1]


# --- shapes ---

def shape_eval(model: LscModel, factor: int, t, T) -> np.ndarray:
    """sigma_f(t, T) of one factor (0 = level, then slopes, then curvatures)."""
    x = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if factor == 0:
        return np.full_like(x, model.sigma_level)
    if factor <= model.n_slope:
        return model.sigma_slope[factor - 1] * np.exp(-x / model.tau_slope[factor - 1])
    j = factor - 1 - model.n_slope
    tau = model.tau_curvature[j]
    return model.sigma_curvature[j] * (x / tau) * np.exp(-x / tau)


def factor_shapes(model: LscModel, t, T) -> np.ndarray:
    """All factor volatilities, shape (..., N)."""
    return np.stack([shape_eval(model, f, t, T) for f in range(model.n_factors)], axis=-1)


def curvature_from_slopes(x, sigma: float, tau_fast: float, tau_slow: float) -> np.ndarray:
    """Two anti-correlated slope shapes; approximates a hump when tau_fast ~ tau_slow."""
    x = np.asarray(x, dtype=float)
    return sigma * (np.exp(-x / tau_slow) - np.exp(-x / tau_fast))


def a_value(kind: StateKind, tau: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if kind is StateKind.level:
        return np.ones_like(t)
    if kind is StateKind.curv2:
        return -(t / tau) * np.exp(t / tau)
    return np.exp(t / tau)


def b_value(kind: StateKind, tau: float, T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if kind is StateKind.level:
        return np.ones_like(T)
    if kind is StateKind.curv1:
        return (T / tau) * np.exp(-T / tau)
    return np.exp(-T / tau)


def scaled_beta(kind: StateKind, tau: float, ts: float, te: float) -> float:
    """exp(ts / tau) * beta_X(ts, te): the delivery average of b_X, O(1) for any tau."""
    if kind is StateKind.level:
        return 1.0
    x = (te - ts) / tau
    phi0 = 1.0 if x < 1e-300 else -math.expm1(-x) / x
    if kind is StateKind.curv1:
        return (ts + tau) / tau * phi0 - math.exp(-x)
    return phi0


def beta_weight(kind: StateKind, tau: float, ts: float, te: float) -> float:
    """(1 / (te - ts)) * integral of b_X over the delivery window."""
    if kind is StateKind.level:
        return 1.0
    return math.exp(-ts / tau) * scaled_beta(kind, tau, ts, te)


# --- cross terms ---

def _psi(m: int, z: np.ndarray) -> np.ndarray:
    """Integral of v^m exp(-z v) over [0, 1], z >= 0."""
    z = np.asarray(z, dtype=float)
    small = z < 1.0
    zs = np.where(small, z, 0.0)
    series = np.zeros_like(z)
    term = np.ones_like(z)
    for j in range(_SERIES_TERMS):
        series += term / (m + j + 1)
        term = term * (-zs) / (j + 1)
    zl = np.where(small, 1.0, z)
    closed = math.factorial(m) * special.gammainc(m + 1, zl) / zl ** (m + 1)
    return np.where(small, series, closed)


def _state_poly(kind: StateKind, tau: float) -> np.ndarray:
    if kind is StateKind.curv2:
        return np.array([0.0, -1.0 / tau])
    return np.array([1.0])


def normalized_cross(basis: StateBasis, t1: float, t2: float) -> np.ndarray:
    """J_pk = exp(-rho t2) * integral over [t1, t2] of a_p a_k, rho = r_p + r_k."""
    d = t2 - t1
    size = basis.size
    if d <= 0:
        return np.zeros((size, size))
    rates = basis.rates
    polys = [_state_poly(kind, tau) for kind, tau in zip(basis.kinds, basis.taus)]
    z = (rates[:, None] + rates[None, :]) * d
    psi = [_psi(i, z) for i in range(3)]
    out = np.zeros((size, size))
    for p in range(size):
        for k in range(p, size):
            coeffs = np.polynomial.polynomial.polymul(polys[p], polys[k])
            total = 0.0
            for n, c in enumerate(coeffs):
                if c == 0.0:
                    continue
                for i in range(n + 1):
                    total += c * math.comb(n, i) * t2 ** (n - i) * (-d) ** i * psi[i][p, k]
            out[p, k] = out[k, p] = d * total
    return out


def cross_term(kind_p: StateKind, kind_k: StateKind, tau_p: float, tau_k: float, t1: float, t2: float) -> float:
    """Integral over [t1, t2] of a_p(t) a_k(t) dt (plain closed form, may overflow for tiny tau)."""
    kinds = (kind_p, kind_k)
    taus = np.array([np.inf if kind_p is StateKind.level else tau_p,
                     np.inf if kind_k is StateKind.level else tau_k])
    basis = StateBasis(kinds=kinds, taus=taus, factor_of_state=np.array([0, 1]), n_factors=2)
    rho = basis.rates.sum()
    return float(math.exp(rho * t2) * normalized_cross(basis, t1, t2)[0, 1])


def anchor(basis: StateBasis, t: float, start: float) -> np.ndarray:
    """exp(r (t - start)) per state; at most one when t <= start."""
    return np.exp(basis.rates * (t - start))


# --- loadings ---

def _g_pieces(correction: Optional[TermCorrection], ts: float, te: float) -> list[tuple[float, float, float]]:
    if correction is None or not correction.g_values:
        return [(ts, te, 1.0)]
    cuts = [k for k in correction.g_knots if ts < k < te]
    edges = [ts, *cuts, te]
    values = correction.g([0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    return [(a, b, float(v)) for a, b, v in zip(edges[:-1], edges[1:], values)]


def _b_polynomial(kind: StateKind, tau: float, T: np.ndarray) -> np.ndarray:
    if kind is StateKind.curv1:
        return T / tau
    return np.ones_like(T)


def state_loadings(basis: StateBasis, window: DeliveryWindow,
                   correction: Optional[TermCorrection] = None) -> np.ndarray:
    """exp(r_s Ts) * (1 / (Te - Ts)) * integral of g(T) b_s(T) over the window."""
    ts, te = window.start, window.end
    length = te - ts
    if correction is not None and correction.smooth and len(correction.g_values) > 1:
        rates = basis.rates

        def integrand(T: float) -> np.ndarray:
            poly = np.array([_b_polynomial(k, tau, np.float64(T)) for k, tau in zip(basis.kinds, basis.taus)])
            return float(correction.g(T)) * poly * np.exp(-rates * (T - ts))

        knots = [k for k in correction.g_knots if ts < k < te]
        mids = [0.5 * (a + b) for a, b in zip(correction.g_knots[:-1], correction.g_knots[1:]) if ts < 0.5 * (a + b) < te]
        value, _ = integrate.quad_vec(integrand, ts, te, epsabs=1e-14, epsrel=1e-12,
                                      points=sorted(set(knots + mids)) or None)
        return value / length

    loads = np.zeros(basis.size)
    for a, b, g in _g_pieces(correction, ts, te):
        weight = g * (b - a) / length
        for s, (kind, tau) in enumerate(zip(basis.kinds, basis.taus)):
            if kind is StateKind.level:
                loads[s] += weight
            else:
                loads[s] += weight * math.exp(-(a - ts) / tau) * scaled_beta(kind, tau, a, b)
    return loads


def factor_covariance(model: LscModel) -> np.ndarray:
    s = model.sigma
    return s[:, None] * model.corr * s[None, :]


def state_covariance(model: LscModel, basis: Optional[StateBasis] = None) -> np.ndarray:
    """x_{p,k} = sigma_p sigma_k R_{p,k} lifted to state variables."""
    basis = basis or StateBasis.from_model(model)
    e = basis.lift
    return e @ factor_covariance(model) @ e.T


# --- model quantities ---

def _h_pieces(correction: Optional[TermCorrection], t1: float, t2: float) -> list[tuple[float, float, float]]:
    if correction is None or not correction.h_values:
        return [(t1, t2, 1.0)]
    cuts = [k for k in correction.h_knots if t1 < k < t2]
    edges = [t1, *cuts, t2]
    values = correction.h([0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    return [(a, b, float(v)) for a, b, v in zip(edges[:-1], edges[1:], values)]


def integrated_covariance(model: LscModel, window_i: DeliveryWindow, window_j: DeliveryWindow,
                          t1: float, t2: float, correction: Optional[TermCorrection] = None) -> float:
    """Integral over [t1, t2] of h(t)^2 Sigma_t(i)^T R Sigma_t(j) dt."""
    if t2 <= t1:
        return 0.0
    basis = StateBasis.from_model(model)
    x = state_covariance(model, basis)
    load_i = state_loadings(basis, window_i, correction)
    load_j = load_i if window_j == window_i else state_loadings(basis, window_j, correction)

    if correction is not None and correction.smooth and len(correction.h_values) > 1:
        def integrand(t: float) -> float:
            vi = kv_volatility_from_loadings(model, basis, load_i, window_i.start, np.array([t]))[0]
            vj = kv_volatility_from_loadings(model, basis, load_j, window_j.start, np.array([t]))[0]
            return float(correction.h(t)) ** 2 * float(vi @ model.corr @ vj)

        points = [k for k in correction.h_knots if t1 < k < t2] or None
        value, _ = integrate.quad(integrand, t1, t2, epsabs=1e-15, epsrel=1e-12, limit=400, points=points)
        return float(value)

    total = 0.0
    for a, b, h in _h_pieces(correction, t1, t2):
        cross = normalized_cross(basis, a, b)
        li = load_i * anchor(basis, b, window_i.start)
        lj = load_j * anchor(basis, b, window_j.start)
        total += h * h * float(li @ (x * cross) @ lj)
    return total


def model_covariance(model: LscModel, spec_i: RollingSpec, spec_j: RollingSpec, tau_d: float,
                     days_per_year: float = 365.0) -> float:
    """Normalized stationary covariance of tau_d-returns of two rolling contracts.

    Delivery windows are shifted by tau_d (years); the value does not depend on any
    observation date.
    """
    wi = spec_i.window(days_per_year).shifted(tau_d)
    wj = spec_j.window(days_per_year).shifted(tau_d)
    return integrated_covariance(model, wi, wj, 0.0, tau_d) / tau_d


def model_vs_variance(model: LscModel, ts: float, te: float, T: float) -> float:
    """sigma_VS^2 over [0, T] of the contract delivering on [ts, te] (g = h = 1)."""
    window = DeliveryWindow(start=ts, end=te)
    return integrated_covariance(model, window, window, 0.0, T) / T


def model_vs_variance_corrected(model: LscModel, correction: TermCorrection,
                                window: DeliveryWindow, T: float) -> float:
    return integrated_covariance(model, window, window, 0.0, T, correction) / T


def kv_volatility_from_loadings(model: LscModel, basis: StateBasis, loads: np.ndarray,
                                start: float, times: np.ndarray) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    rates = basis.rates
    states = np.empty((times.size, basis.size))
    for s, (kind, tau) in enumerate(zip(basis.kinds, basis.taus)):
        if kind is StateKind.level:
            states[:, s] = loads[s]
            continue
        decay = np.exp(rates[s] * (times - start))
        poly = -(times / tau) if kind is StateKind.curv2 else 1.0
        states[:, s] = loads[s] * poly * decay
    return (states @ basis.lift) * model.sigma[None, :]


def kv_volatility(model: LscModel, correction: Optional[TermCorrection], t, ts: float, te: float) -> np.ndarray:
    """Sigma_t(ts, te): delivery-averaged factor volatilities, shape (N,) or (n_t, N)."""
    basis = StateBasis.from_model(model)
    window = DeliveryWindow(start=ts, end=te)
    loads = state_loadings(basis, window, correction)
    out = kv_volatility_from_loadings(model, basis, loads, ts, np.atleast_1d(t))
    return out[0] if np.ndim(t) == 0 else out


def instantaneous_correlation(model: LscModel, correction: Optional[TermCorrection],
                              window_i: DeliveryWindow, window_j: DeliveryWindow, t: float) -> float:
    si = kv_volatility(model, correction, t, window_i.start, window_i.end)
    sj = kv_volatility(model, correction, t, window_j.start, window_j.end)
    r = model.corr
    denom = math.sqrt(float(si @ r @ si) * float(sj @ r @ sj))
    return float(np.clip((si @ r @ sj) / denom, -1.0, 1.0))


def correlation_matrix(model: LscModel, correction: Optional[TermCorrection],
                       windows: Sequence[DeliveryWindow], t: float = 0.0) -> np.ndarray:
    vols = np.array([kv_volatility(model, correction, t, w.start, w.end) for w in windows])
    cov = vols @ model.corr @ vols.T
    d = np.sqrt(np.diag(cov))
    return np.clip(cov / np.outer(d, d), -1.0, 1.0)
