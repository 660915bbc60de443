"""Pydantic domain models shared across the calibration pipeline."""

from __future__ import annotations

from datetime import date
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.interpolate import PchipInterpolator

SCHEMA_VERSION = 1


# --- Enums ---

class ContractKind(str, Enum):
    day = "day"
    month = "month"
    quarter = "quarter"
    season = "season"
    calendar = "calendar"
    other = "other"

    @classmethod
    def from_duration(cls, days: float) -> "ContractKind":
        if days <= 1.5:
            return cls.day
        if days <= 31.5:
            return cls.month
        if days <= 92.5:
            return cls.quarter
        if days <= 184.5:
            return cls.season
        if 364 <= days <= 366.5:
            return cls.calendar
        return cls.other


class RunStatus(str, Enum):
    pending = "pending"
    stripping = "stripping"
    estimating_covariance = "estimating_covariance"
    fitting_surface = "fitting_surface"
    calibrating_step1 = "calibrating_step1"
    calibrating_step2 = "calibrating_step2"
    calibrating_step3 = "calibrating_step3"
    reporting = "reporting"
    completed = "completed"
    failed = "failed"


# --- Market data ---

class AbsoluteQuote(BaseModel):
    """Exchange futures quote delivering over [start, end) (end exclusive)."""
    contract_id: str = Field(..., description="Label such as 'Q4 24'")
    start: date
    end: date
    price: float = Field(..., description="Currency per MWh")
    daily_weights: Optional[list[float]] = Field(
        None, description="Per-day delivery weights; uniform base-load profile when omitted"
    )

    def model_post_init(self, __context):
        if self.start >= self.end:
            raise ValueError(f"{self.contract_id}: delivery start must precede end")
        if not np.isfinite(self.price):
            raise ValueError(f"{self.contract_id}: price must be finite")
        if self.daily_weights is not None:
            w = np.asarray(self.daily_weights, dtype=float)
            if w.size != self.n_days:
                raise ValueError(f"{self.contract_id}: expected {self.n_days} daily weights, got {w.size}")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"{self.contract_id}: weights must be nonnegative and sum to 1")

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days

    def weights(self) -> np.ndarray:
        if self.daily_weights is None:
            return np.full(self.n_days, 1.0 / self.n_days)
        return np.asarray(self.daily_weights, dtype=float)


class RollingSpec(BaseModel):
    """Constant time-to-delivery contract, in calendar days from the observation date."""
    ts_days: int = Field(..., ge=0)
    te_days: int

    def model_post_init(self, __context):
        if self.te_days <= self.ts_days:
            raise ValueError("rolling delivery end must be after start")

    @property
    def label(self) -> str:
        return f"R{self.ts_days}-{self.te_days}"

    def window(self, days_per_year: float = 365.0) -> "DeliveryWindow":
        return DeliveryWindow(start=self.ts_days / days_per_year, end=self.te_days / days_per_year)


class DeliveryWindow(BaseModel):
    """Delivery period in years from the observation date."""
    start: float = Field(..., ge=0.0)
    end: float

    def model_post_init(self, __context):
        if self.end <= self.start:
            raise ValueError("delivery end must be after start")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)

    def shifted(self, lag: float) -> "DeliveryWindow":
        return DeliveryWindow(start=self.start + lag, end=self.end + lag)

    def contains(self, other: "DeliveryWindow", tol: float = 1e-12) -> bool:
        return self.start <= other.start + tol and other.end <= self.end + tol

    def overlaps(self, other: "DeliveryWindow", tol: float = 1e-12) -> bool:
        return min(self.end, other.end) - max(self.start, other.start) > tol


class SmileQuote(BaseModel):
    """Implied-volatility smile of one futures contract at one option maturity."""
    contract_id: str
    window: DeliveryWindow
    forward: float = Field(..., gt=0)
    maturity: float = Field(..., gt=0, description="Option maturity in years (ACT/365)")
    strikes: list[float]
    vols: list[float]
    kind: Optional[ContractKind] = None

    def model_post_init(self, __context):
        k = np.asarray(self.strikes, dtype=float)
        if k.size == 0 or k.size != len(self.vols):
            raise ValueError(f"{self.contract_id}: strikes and vols must be nonempty and aligned")
        if np.any(np.diff(k) <= 0) or np.any(k <= 0):
            raise ValueError(f"{self.contract_id}: strikes must be positive and strictly increasing")
        if np.any(np.asarray(self.vols) <= 0):
            raise ValueError(f"{self.contract_id}: vols must be positive")
        if self.kind is None:
            self.kind = ContractKind.from_duration(self.window.length * 365.0)

    @property
    def label(self) -> str:
        return f"{self.contract_id}@{self.maturity:.4f}"

    @property
    def log_moneyness(self) -> np.ndarray:
        return np.log(np.asarray(self.strikes) / self.forward)

    def atm_vol(self) -> float:
        return float(np.interp(0.0, self.log_moneyness, self.vols))


class VsTarget(BaseModel):
    """Market variance-swap level of one smile: sigma_vs^2 over [0, maturity]."""
    contract_id: str
    window: DeliveryWindow
    maturity: float = Field(..., gt=0)
    variance: float = Field(..., ge=0)
    weight: float = Field(1.0, ge=0)

    @property
    def label(self) -> str:
        return f"{self.contract_id}@{self.maturity:.4f}"

    @property
    def total_variance(self) -> float:
        return self.variance * self.maturity


class MultiSsviParams(BaseModel):
    """SSVI family sharing (eta, gamma) across contracts with per-contract rho."""
    contracts: list[str]
    rho: list[float]
    eta: float = Field(..., gt=0)
    gamma: float = Field(..., gt=0, le=0.5)
    theta_maturities: dict[str, list[float]]
    theta_values: dict[str, list[float]]
    residuals: dict[str, float] = {}

    def model_post_init(self, __context):
        if len(self.rho) != len(self.contracts):
            raise ValueError("one rho per contract required")
        if any(abs(r) > 1 for r in self.rho):
            raise ValueError("rho must lie in [-1, 1]")
        if self.eta * (1 + max(abs(r) for r in self.rho)) > 2 + 1e-9:
            raise ValueError("eta (1 + max|rho|) <= 2 violated")
        for cid in self.contracts:
            theta = np.asarray(self.theta_values[cid])
            if np.any(theta <= 0) or np.any(np.diff(theta) < 0):
                raise ValueError(f"{cid}: ATM total variance must be positive and nondecreasing")

    def rho_of(self, contract_id: str) -> float:
        return self.rho[self.contracts.index(contract_id)]


# --- Model ---

class LscModel(BaseModel):
    """Level / slope / curvature deterministic volatility block."""
    sigma_level: float = Field(..., gt=0)
    sigma_slope: list[float] = []
    tau_slope: list[float] = []
    sigma_curvature: list[float] = []
    tau_curvature: list[float] = []
    correlation: list[list[float]]

    @model_validator(mode="after")
    def _check(self) -> "LscModel":
        if len(self.sigma_slope) != len(self.tau_slope):
            raise ValueError("slope sigma/tau length mismatch")
        if len(self.sigma_curvature) != len(self.tau_curvature):
            raise ValueError("curvature sigma/tau length mismatch")
        for name, taus in (("slope", self.tau_slope), ("curvature", self.tau_curvature)):
            t = np.asarray(taus, dtype=float)
            if np.any(t <= 0) or np.any(np.diff(t) <= 0):
                raise ValueError(f"{name} time-scales must be positive and strictly increasing")
        if any(s <= 0 for s in self.sigma_slope + self.sigma_curvature):
            raise ValueError("all amplitudes must be positive")
        r = np.asarray(self.correlation, dtype=float)
        n = self.n_factors
        if r.shape != (n, n):
            raise ValueError(f"correlation must be {n}x{n}")
        if not np.allclose(r, r.T, atol=1e-12) or not np.allclose(np.diag(r), 1.0, atol=1e-12):
            raise ValueError("correlation must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(r).min() < -1e-10:
            raise ValueError("correlation must be positive semidefinite")
        return self

    @property
    def n_slope(self) -> int:
        return len(self.sigma_slope)

    @property
    def n_curvature(self) -> int:
        return len(self.sigma_curvature)

    @property
    def n_factors(self) -> int:
        return 1 + self.n_slope + self.n_curvature

    @property
    def name(self) -> str:
        return f"1L{self.n_slope}S{self.n_curvature}C"

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma_level, *self.sigma_slope, *self.sigma_curvature], dtype=float)

    @property
    def tau(self) -> np.ndarray:
        return np.array([*self.tau_slope, *self.tau_curvature], dtype=float)

    @property
    def corr(self) -> np.ndarray:
        return np.asarray(self.correlation, dtype=float)

    def cholesky(self) -> np.ndarray:
        r = self.corr
        try:
            return np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            return np.linalg.cholesky(r + 1e-12 * np.eye(len(r)))

    @classmethod
    def single_level(cls, sigma: float) -> "LscModel":
        return cls(sigma_level=sigma, correlation=[[1.0]])


class TermCorrection(BaseModel):
    """Positive corrections g(T) (delivery time) and h(t) (calendar time).

    g is piecewise constant on [g_knots[i], g_knots[i+1]) and 1 outside the knots;
    h is piecewise constant on [h_knots[j], h_knots[j+1]) and keeps its last value
    beyond the last knot. With ``smooth`` the pieces are replaced by a monotone
    cubic through the piece midpoints, clamped to the end values.
    """
    g_knots: list[float] = []
    g_values: list[float] = []
    h_knots: list[float] = []
    h_values: list[float] = []
    smooth: bool = False

    def model_post_init(self, __context):
        for name, knots, values in (("g", self.g_knots, self.g_values), ("h", self.h_knots, self.h_values)):
            if values and len(knots) != len(values) + 1:
                raise ValueError(f"{name}: need len(knots) == len(values) + 1")
            if np.any(np.diff(knots) <= 0):
                raise ValueError(f"{name}: knots must be strictly increasing")
            if any(v <= 0 for v in values):
                raise ValueError(f"{name}: values must be positive")

    @classmethod
    def identity(cls) -> "TermCorrection":
        return cls()

    @property
    def g_is_identity(self) -> bool:
        return not self.g_values or all(v == 1.0 for v in self.g_values)

    @property
    def h_is_identity(self) -> bool:
        return not self.h_values or all(v == 1.0 for v in self.h_values)

    def g(self, T) -> np.ndarray:
        return _evaluate(self.g_knots, self.g_values, T, self.smooth, right_default=1.0)

    def h(self, t) -> np.ndarray:
        tail = self.h_values[-1] if self.h_values else 1.0
        return _evaluate(self.h_knots, self.h_values, t, self.smooth, right_default=tail)


def _evaluate(knots: list[float], values: list[float], x, smooth: bool, right_default: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not values:
        return np.ones_like(x)
    k = np.asarray(knots)
    v = np.asarray(values)
    out = np.where(x >= k[-1], right_default, 1.0)
    inside = (x >= k[0]) & (x < k[-1])
    if not smooth or len(v) < 2:
        idx = np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(v) - 1)
        return np.where(inside, v[idx], out)
    mids = 0.5 * (k[:-1] + k[1:])
    curve = PchipInterpolator(mids, v, extrapolate=False)
    xs = np.clip(x, mids[0], mids[-1])
    return np.where(inside, curve(xs), out)


class LiftedHestonParams(BaseModel):
    """Stochastic variance V = 1 + sum c_i U^i with leverage vector rho_hat."""
    c: list[float]
    x: list[float]
    rho_hat: list[float]

    def model_post_init(self, __context):
        if len(self.c) != len(self.x) or not self.c:
            raise ValueError("c and x must be nonempty and aligned")
        if any(ci < 0 for ci in self.c) or any(xi < 0 for xi in self.x):
            raise ValueError("c and x must be nonnegative")
        if float(np.linalg.norm(self.rho_hat)) > 1 + 1e-12:
            raise ValueError("||rho_hat|| must not exceed 1")

    @property
    def n_factors(self) -> int:
        return len(self.c)

    def rho_tilde(self, model: LscModel) -> np.ndarray:
        return model.cholesky() @ np.asarray(self.rho_hat, dtype=float)

    def canonical(self) -> "LiftedHestonParams":
        order = np.argsort(self.x, kind="stable")
        return LiftedHestonParams(
            c=[self.c[i] for i in order], x=[self.x[i] for i in order], rho_hat=list(self.rho_hat)
        )

    @classmethod
    def deterministic(cls, n_factors: int) -> "LiftedHestonParams":
        return cls(c=[0.0], x=[1.0], rho_hat=[0.0] * n_factors)


class ModelBundle(BaseModel):
    """Everything needed to price: versioned for persistence."""
    schema_version: int = SCHEMA_VERSION
    observation_date: Optional[date] = None
    lsc: LscModel
    correction: TermCorrection = TermCorrection()
    heston: LiftedHestonParams
