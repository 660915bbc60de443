"""Step 1: joint historical-covariance / variance-swap calibration of the factor block.

For fixed time-scales tau the loss is quadratic in the factor covariance
X = diag(sigma) R diag(sigma), so the inner problem is a convex cone program
(PSD + box on variances). The outer search over tau is derivative free.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from ..errors import ExtractionDegenerate, Infeasible, SolverStall
from ..models import DeliveryWindow, LscModel, RollingSpec, VsTarget
from . import lsc
from .cone import ConeProgram, SQRT2, project_psd_matrix, smat, svec, svec_size, tril_indices_colmajor

logger = logging.getLogger("hjmcal.calib")

_BIG_M = 1e12


@dataclass
class Step1Problem:
    c_mkt: np.ndarray
    gamma: np.ndarray
    specs: list[RollingSpec]
    vs_targets: list[VsTarget]
    lam: float = 0.5
    n_slope: int = 2
    n_curvature: int = 1
    tau_d: float = 1.0 / 252.0
    days_per_year: float = 365.0
    sigma_upper: Optional[np.ndarray] = None
    sigma_level_multiple: float = 3.0

    def __post_init__(self):
        self.c_mkt = np.asarray(self.c_mkt, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.c_mkt.shape != (len(self.specs), len(self.specs)):
            raise ValueError("covariance shape does not match rolling specs")

    @property
    def n_factors(self) -> int:
        return 1 + self.n_slope + self.n_curvature

    @property
    def vs_weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.vs_targets], dtype=float)

    def with_counts(self, n_slope: int, n_curvature: int) -> "Step1Problem":
        return Step1Problem(
            c_mkt=self.c_mkt, gamma=self.gamma, specs=self.specs, vs_targets=self.vs_targets,
            lam=self.lam, n_slope=n_slope, n_curvature=n_curvature, tau_d=self.tau_d,
            days_per_year=self.days_per_year, sigma_level_multiple=self.sigma_level_multiple,
        )

    def variance_upper(self) -> np.ndarray:
        """Upper bounds on factor variances; only the level factor is bounded by default."""
        if self.sigma_upper is not None:
            return np.asarray(self.sigma_upper, dtype=float) ** 2
        ub = np.full(self.n_factors, np.inf)
        if self.specs:
            longest = max(range(len(self.specs)), key=lambda i: self.specs[i].te_days)
            ub[0] = (self.sigma_level_multiple * math.sqrt(max(self.c_mkt[longest, longest], 0.0))) ** 2
        return ub

    def windows(self) -> list[DeliveryWindow]:
        return [s.window(self.days_per_year) for s in self.specs] + [t.window for t in self.vs_targets]


def tau_from_a(a: np.ndarray, n_slope: int, n_curvature: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative-exponential map: positive, strictly increasing within each family."""
    a = np.asarray(a, dtype=float)
    return np.cumsum(np.exp(a[:n_slope])), np.cumsum(np.exp(a[n_slope:n_slope + n_curvature]))


def a_from_tau(tau_slope: Sequence[float], tau_curvature: Sequence[float]) -> np.ndarray:
    parts = []
    for taus in (tau_slope, tau_curvature):
        t = np.asarray(taus, dtype=float)
        if t.size:
            parts.append(np.log(np.diff(t, prepend=0.0)))
    return np.concatenate(parts) if parts else np.zeros(0)


def init_tau(problem: Step1Problem, rng: Optional[np.random.Generator] = None, noise: float = 0.3) -> np.ndarray:
    """Starting point from delivery mid-points averaged down to the factor counts."""
    mids = np.sort([w.midpoint for w in problem.windows()])
    taus = []
    for count in (problem.n_slope, problem.n_curvature):
        if count == 0:
            taus.append(np.zeros(0))
            continue
        groups = np.array_split(mids, count)
        t = np.array([g.mean() if g.size else mids[-1] for g in groups])
        if rng is not None and noise > 0:
            t = t * np.exp(noise * rng.standard_normal(count))
        t = np.sort(t)
        # equal draws would break strict monotonicity
        t = np.maximum.accumulate(t * (1.0 + 1e-9 * np.arange(count)))
        taus.append(t)
    return a_from_tau(*taus)


# --- weights ---

@dataclass(frozen=True)
class Step1Weights:
    """Factor-level coefficient matrices: model value = <W, X>."""
    cov: np.ndarray  # (P, P, N, N)
    vs: np.ndarray  # (L, N, N)


def _state_weight(basis: lsc.StateBasis, wi: DeliveryWindow, wj: DeliveryWindow,
                  t_end: float, loads_i: np.ndarray, loads_j: np.ndarray) -> np.ndarray:
    cross = lsc.normalized_cross(basis, 0.0, t_end)
    li = loads_i * lsc.anchor(basis, t_end, wi.start)
    lj = loads_j * lsc.anchor(basis, t_end, wj.start)
    w = np.outer(li, lj) * cross
    return 0.5 * (w + w.T)


def build_weights(tau_slope: Sequence[float], tau_curvature: Sequence[float], problem: Step1Problem) -> Step1Weights:
    basis = lsc.StateBasis.from_counts(tau_slope, tau_curvature)
    e = basis.lift
    p = len(problem.specs)
    n = basis.n_factors

    shifted = [s.window(problem.days_per_year).shifted(problem.tau_d) for s in problem.specs]
    loads = [lsc.state_loadings(basis, w) for w in shifted]
    cov = np.zeros((p, p, n, n))
    for i in range(p):
        for j in range(i, p):
            w = _state_weight(basis, shifted[i], shifted[j], problem.tau_d, loads[i], loads[j]) / problem.tau_d
            cov[i, j] = cov[j, i] = e.T @ w @ e

    vs = np.zeros((len(problem.vs_targets), n, n))
    for l, target in enumerate(problem.vs_targets):
        ld = lsc.state_loadings(basis, target.window)
        w = _state_weight(basis, target.window, target.window, target.maturity, ld, ld) / target.maturity
        vs[l] = e.T @ w @ e
    return Step1Weights(cov=cov, vs=vs)


def _design(weights: Step1Weights, problem: Step1Problem) -> tuple[np.ndarray, np.ndarray, int]:
    """Weighted residual rows in svec(X) coordinates; returns (A, m, n_cov_rows)."""
    rows, targets, scales = [], [], []
    p = len(problem.specs)
    if problem.lam > 0:
        for i in range(p):
            for j in range(p):
                rows.append(svec(weights.cov[i, j]))
                targets.append(problem.c_mkt[i, j])
                scales.append(math.sqrt(problem.lam * problem.gamma[i, j]))
    n_cov = len(rows)
    if problem.lam < 1:
        for l, target in enumerate(problem.vs_targets):
            rows.append(svec(weights.vs[l]))
            targets.append(target.variance)
            scales.append(math.sqrt((1.0 - problem.lam) * target.weight))
    n = weights.cov.shape[-1] if p else weights.vs.shape[-1]
    if not rows:
        raise Infeasible("no calibration targets")
    s = np.asarray(scales)
    return np.asarray(rows).reshape(len(rows), svec_size(n)) * s[:, None], np.asarray(targets) * s, n_cov


# --- inner solvers ---

@dataclass
class InnerResult:
    x: np.ndarray  # factor-level covariance matrix
    loss: float
    iterations: int
    solver: str


class InnerSolver(ABC):
    """Solves min ||A svec(X) - m||^2 over PSD X with 0 <= diag(X) <= upper."""

    name = "abstract"

    @abstractmethod
    def solve(self, a: np.ndarray, m: np.ndarray, upper: np.ndarray,
              warm_start: Optional[np.ndarray] = None) -> InnerResult:
        ...


def _within_box(x: np.ndarray, upper: np.ndarray, tol: float = 1e-12) -> bool:
    d = np.diag(x)
    return bool(np.all(d >= -tol) and np.all(d <= upper + tol))


def _shrink_into_box(x: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Congruence D x D with D diagonal, pulling every variance under its bound (keeps PSD)."""
    d = np.clip(np.diag(x), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(d > upper, np.sqrt(np.asarray(upper, dtype=float) / d), 1.0)
    return x * np.outer(s, s)


class AdmmSolver(InnerSolver):
    """Consensus ADMM over the PSD cone and the variance box."""

    name = "admm"

    def __init__(self, tolerance: float = 1e-9, max_iterations: int = 50_000, relaxation: float = 1.6):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.relaxation = relaxation

    def solve(self, a, m, upper, warm_start=None) -> InnerResult:
        n = len(upper)
        x_ls, *_ = np.linalg.lstsq(a, m, rcond=None)
        x0 = smat(x_ls)
        if np.linalg.eigvalsh(x0).min() >= -1e-14 and _within_box(x0, upper):
            return InnerResult(x=x0, loss=float(np.sum((a @ x_ls - m) ** 2)), iterations=0, solver=self.name)

        size = svec_size(n)
        diag_idx = np.flatnonzero(np.equal(*tril_indices_colmajor(n)))
        ata = a.T @ a
        atm = a.T @ m
        scale = max(1.0, float(np.abs(ata).max()))
        rho = scale
        factor = linalg.cho_factor(2.0 * ata + 2.0 * rho * np.eye(size))

        def box(v: np.ndarray) -> np.ndarray:
            out = v.copy()
            out[diag_idx] = np.clip(out[diag_idx], 0.0, upper)
            return out

        start = svec(project_psd_matrix(warm_start)) if warm_start is not None else svec(project_psd_matrix(x0))
        z1, z2 = start.copy(), box(start)
        u1, u2 = np.zeros(size), np.zeros(size)
        alpha = self.relaxation
        for it in range(1, self.max_iterations + 1):
            x = linalg.cho_solve(factor, 2.0 * atm + rho * (z1 - u1 + z2 - u2))
            x1 = alpha * x + (1.0 - alpha) * z1
            x2 = alpha * x + (1.0 - alpha) * z2
            z1_old, z2_old = z1, z2
            z1 = svec(project_psd_matrix(smat(x1 + u1)))
            z2 = box(x2 + u2)
            u1 = u1 + x1 - z1
            u2 = u2 + x2 - z2

            primal = math.hypot(np.linalg.norm(x - z1), np.linalg.norm(x - z2))
            dual = rho * math.hypot(np.linalg.norm(z1 - z1_old), np.linalg.norm(z2 - z2_old))
            ref = max(1.0, float(np.linalg.norm(x)))
            if primal <= self.tolerance * ref and dual <= self.tolerance * max(ref, float(np.linalg.norm(atm))):
                result = smat(z1)
                return InnerResult(x=result, loss=float(np.sum((a @ z1 - m) ** 2)), iterations=it, solver=self.name)
            if it % 50 == 0:
                if primal > 10.0 * dual:
                    rho, u1, u2 = rho * 2.0, u1 / 2.0, u2 / 2.0
                elif dual > 10.0 * primal:
                    rho, u1, u2 = rho / 2.0, u1 * 2.0, u2 * 2.0
                else:
                    continue
                factor = linalg.cho_factor(2.0 * ata + 2.0 * rho * np.eye(size))

        best = _shrink_into_box(smat(z1), upper)
        raise SolverStall(
            f"ADMM did not reach tolerance {self.tolerance:g} in {self.max_iterations} iterations",
            payload={"best": best, "loss": float(np.sum((a @ svec(best) - m) ** 2)), "iterations": self.max_iterations},
        )


def create_inner_solver(name: str = "admm", tolerance: float = 1e-9, max_iterations: int = 50_000) -> InnerSolver:
    if name == "admm":
        return AdmmSolver(tolerance=tolerance, max_iterations=max_iterations)
    raise ValueError(f"Unknown inner solver: {name}")


def solve_inner(tau_slope: Sequence[float], tau_curvature: Sequence[float], problem: Step1Problem,
                solver: Optional[InnerSolver] = None, warm_start: Optional[np.ndarray] = None) -> InnerResult:
    solver = solver or AdmmSolver()
    weights = build_weights(tau_slope, tau_curvature, problem)
    a, m, _ = _design(weights, problem)
    return solver.solve(a, m, problem.variance_upper(), warm_start)


def loss_components(x: np.ndarray, weights: Step1Weights, problem: Step1Problem) -> tuple[float, float]:
    """(J1, J2): Gamma-weighted covariance error and weighted VS error."""
    model_cov = np.einsum("ijpk,pk->ij", weights.cov, x)
    j1 = float(np.sum(problem.gamma * (model_cov - problem.c_mkt) ** 2)) if problem.specs else 0.0
    if problem.vs_targets:
        model_vs = np.einsum("lpk,pk->l", weights.vs, x)
        target = np.array([t.variance for t in problem.vs_targets])
        j2 = float(np.sum(problem.vs_weights * (model_vs - target) ** 2))
    else:
        j2 = 0.0
    return j1, j2


# --- full cone program over state variables (certificates, external solvers) ---

def state_level(x: np.ndarray, basis: lsc.StateBasis) -> np.ndarray:
    e = basis.lift
    return e @ x @ e.T


def build_cone_program(tau_slope: Sequence[float], tau_curvature: Sequence[float],
                       problem: Step1Problem) -> ConeProgram:
    """Epigraph form over (t, lower triangle of the state-level matrix, column-major).

    Rows: variance bounds (orthant), residual norm (one second-order cone), PSD of the
    {L, S, C1} restriction; equalities tie each C2 state to its C1 partner.
    """
    basis = lsc.StateBasis.from_counts(tau_slope, tau_curvature)
    weights = build_weights(tau_slope, tau_curvature, problem)
    a_fac, m, _ = _design(weights, problem)
    ns = basis.size
    rows, cols = tril_indices_colmajor(ns)
    nv = 1 + len(rows)
    pos = {(int(r), int(c)): 1 + k for k, (r, c) in enumerate(zip(rows, cols))}

    def var(p: int, k: int) -> int:
        return pos[(max(p, k), min(p, k))]

    # residual in state-level lower-triangle coordinates: state entry (p,k) maps to factor entry
    fac = basis.factor_of_state
    n = basis.n_factors
    frow, fcol = tril_indices_colmajor(n)
    fpos = {(int(r), int(c)): k for k, (r, c) in enumerate(zip(frow, fcol))}
    primary = [s for s, kind in enumerate(basis.kinds) if kind is not lsc.StateKind.curv2]
    a_state = np.zeros((len(m), nv))
    for p in primary:
        for k in primary:
            if p < k:
                continue
            fp, fk = fac[p], fac[k]
            col = fpos[(max(fp, fk), min(fp, fk))]
            coef = a_fac[:, col] * (1.0 if fp == fk else SQRT2)
            a_state[:, var(p, k)] = coef

    g_rows, h_vals = [], []
    upper = problem.variance_upper()
    for s in primary:
        row = np.zeros(nv)
        row[var(s, s)] = 1.0
        g_rows.append(row)
        h_vals.append(min(upper[fac[s]], _BIG_M))
    l_dim = len(g_rows)

    q_factor, r_factor = np.linalg.qr(a_state[:, 1:])
    reduced_target = q_factor.T @ m
    head = np.zeros(nv)
    head[0] = -1.0
    g_rows.append(head)
    h_vals.append(0.0)
    for i in range(r_factor.shape[0]):
        row = np.zeros(nv)
        row[1:] = r_factor[i]
        g_rows.append(row)
        h_vals.append(reduced_target[i])
    q_dim = 1 + r_factor.shape[0]

    prow, pcol = tril_indices_colmajor(len(primary))
    for r, c in zip(prow, pcol):
        row = np.zeros(nv)
        row[var(primary[r], primary[c])] = -(1.0 if r == c else SQRT2)
        g_rows.append(row)
        h_vals.append(0.0)

    eq_rows = []
    for c1, c2 in basis.curvature_pairs:
        pairs = [((c2, c2), (c1, c1)), ((c1, c2), (c1, c1))]
        pairs += [((p, c2), (p, c1)) for p in range(ns) if p not in (c1, c2)]
        for lhs, rhs in pairs:
            row = np.zeros(nv)
            row[var(*lhs)] += 1.0
            row[var(*rhs)] -= 1.0
            if np.any(row):
                eq_rows.append(row)
    a_eq = np.asarray(eq_rows).reshape(len(eq_rows), nv)
    c = np.zeros(nv)
    c[0] = 1.0
    return ConeProgram(c=c, G=np.asarray(g_rows), h=np.asarray(h_vals), A=a_eq, b=np.zeros(len(eq_rows)),
                       l=l_dim, q=[q_dim], s=[len(primary)])


def cone_point(x: np.ndarray, tau_slope: Sequence[float], tau_curvature: Sequence[float],
               problem: Step1Problem) -> np.ndarray:
    """Map a factor covariance into the cone program's variable (t at its epigraph value)."""
    basis = lsc.StateBasis.from_counts(tau_slope, tau_curvature)
    prog = build_cone_program(tau_slope, tau_curvature, problem)
    xs = state_level(x, basis)
    rows, cols = tril_indices_colmajor(basis.size)
    point = np.concatenate([[0.0], xs[rows, cols]])
    soc = slice(prog.l, prog.l + prog.q[0])
    residual = (prog.h - prog.G @ point)[soc][1:]
    point[0] = float(np.linalg.norm(residual))
    return point


# --- outer search ---

@dataclass
class Step1Result:
    model: LscModel
    x: np.ndarray
    loss: float
    j1: float
    j2: float
    restarts: int
    evaluations: int
    condition: float
    history: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "model": self.model.name,
            "loss": self.loss,
            "j1": self.j1,
            "j2": self.j2,
            "restarts": self.restarts,
            "evaluations": self.evaluations,
            "condition": self.condition,
        }


def extract_parameters(x: np.ndarray, tau_slope: Sequence[float], tau_curvature: Sequence[float]) -> LscModel:
    d = np.diag(x)
    if np.any(d <= 1e-14):
        bad = np.flatnonzero(d <= 1e-14).tolist()
        raise ExtractionDegenerate(
            f"factor variance(s) {bad} vanish: the factor count can be reduced",
            payload={"x": x, "tau_slope": list(tau_slope), "tau_curvature": list(tau_curvature)},
        )
    sigma = np.sqrt(d)
    corr = np.clip(x / np.outer(sigma, sigma), -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    ns = len(tau_slope)
    return LscModel(
        sigma_level=float(sigma[0]),
        sigma_slope=sigma[1:1 + ns].tolist(),
        tau_slope=[float(t) for t in tau_slope],
        sigma_curvature=sigma[1 + ns:].tolist(),
        tau_curvature=[float(t) for t in tau_curvature],
        correlation=corr.tolist(),
    )


def underparametrization_check(problem: Step1Problem) -> tuple[int, int, bool]:
    n = problem.n_factors
    p = len(problem.specs)
    lhs = n * (n + 3) // 2 - 1
    rhs = len(problem.vs_targets) + p * (p + 1) // 2
    return lhs, rhs, lhs <= rhs


def _solve_or_best(tau_slope: np.ndarray, tau_curvature: np.ndarray, problem: Step1Problem,
                   solver: InnerSolver, quiet: bool = True) -> InnerResult:
    """Inner solve that falls back to the best feasible iterate of a stalled solver."""
    try:
        return solve_inner(tau_slope, tau_curvature, problem, solver)
    except SolverStall as e:
        if not quiet:
            logger.warning(f"inner solver stalled at tau_slope={list(tau_slope)}, tau_curvature={list(tau_curvature)}; keeping its best iterate")
        return InnerResult(x=e.payload["best"], loss=float(e.payload["loss"]),
                           iterations=int(e.payload.get("iterations", -1)), solver=solver.name)


def _inner_loss(a: np.ndarray, problem: Step1Problem, solver: InnerSolver) -> float:
    ts, tc = tau_from_a(a, problem.n_slope, problem.n_curvature)
    return _solve_or_best(ts, tc, problem, solver).loss


def _one_restart(problem: Step1Problem, seed: np.random.SeedSequence, solver: InnerSolver,
                 noise: float, xatol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    rng = np.random.default_rng(seed)
    a0 = init_tau(problem, rng, noise)
    if a0.size == 0:
        return a0, _inner_loss(a0, problem, solver), 1
    res = optimize.minimize(
        _inner_loss, a0, args=(problem, solver), method="Nelder-Mead",
        options={"adaptive": True, "xatol": xatol, "fatol": 1e-16, "maxiter": max_iter, "maxfev": 4 * max_iter},
    )
    return res.x, float(res.fun), int(res.nfev)


def calibrate_step1(problem: Step1Problem, restarts: int = 100, seed: int = 0, workers: int = 1,
                    solver: Optional[InnerSolver] = None, noise: float = 0.3, xatol: float = 1e-6,
                    max_iter: int = 2000) -> Step1Result:
    solver = solver or AdmmSolver()
    lhs, rhs, ok = underparametrization_check(problem)
    if not ok:
        logger.warning(f"{problem.n_factors} factors need {lhs} parameters but only {rhs} targets are available")

    n_runs = 1 if problem.n_slope + problem.n_curvature == 0 else restarts
    seeds = np.random.SeedSequence(seed).spawn(n_runs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(lambda s: _one_restart(problem, s, solver, noise, xatol, max_iter), seeds))

    best_loss = min(loss for _, loss, _ in runs)
    candidates = []
    for a, loss, _ in runs:
        if loss > best_loss + 1e-12 * max(1.0, abs(best_loss)):
            continue
        ts, tc = tau_from_a(a, problem.n_slope, problem.n_curvature)
        inner = _solve_or_best(ts, tc, problem, solver, quiet=False)
        d = np.sqrt(np.maximum(np.diag(inner.x), 1e-300))
        cond = float(np.linalg.cond(inner.x / np.outer(d, d)))
        candidates.append((loss, cond, ts, tc, inner))
    loss, cond, ts, tc, inner = min(candidates, key=lambda c: (c[0], c[1]))

    model = extract_parameters(inner.x, ts, tc)
    weights = build_weights(ts, tc, problem)
    j1, j2 = loss_components(inner.x, weights, problem)
    total = problem.lam * j1 + (1.0 - problem.lam) * j2
    logger.info(f"Step 1 {model.name}: loss={total:.6g} (J1={j1:.4g}, J2={j2:.4g}) over {n_runs} restarts")
    return Step1Result(
        model=model, x=inner.x, loss=total, j1=j1, j2=j2, restarts=n_runs,
        evaluations=sum(n for _, _, n in runs), condition=cond, history=sorted(l for _, l, _ in runs),
    )


def factor_count_scan(problem: Step1Problem, max_slope: int = 3, max_curvature: int = 1, restarts: int = 10,
                      seed: int = 0, workers: int = 1, solver: Optional[InnerSolver] = None) -> pd.DataFrame:
    rows = []
    for ns in range(max_slope + 1):
        for nc in range(max_curvature + 1):
            sub = problem.with_counts(ns, nc)
            try:
                res = calibrate_step1(sub, restarts=restarts, seed=seed, workers=workers, solver=solver)
                rows.append({"n_slope": ns, "n_curvature": nc, "model": res.model.name,
                             "j1": res.j1, "j2": res.j2, "loss": res.loss})
            except ExtractionDegenerate as e:
                logger.warning(f"1L{ns}S{nc}C degenerate: {e}")
                rows.append({"n_slope": ns, "n_curvature": nc, "model": f"1L{ns}S{nc}C",
                             "j1": np.nan, "j2": np.nan, "loss": np.nan})
    return pd.DataFrame(rows)


# --- reporting helpers ---

def model_covariance_matrix(model: LscModel, specs: Sequence[RollingSpec], tau_d: float,
                            days_per_year: float = 365.0) -> np.ndarray:
    p = len(specs)
    out = np.zeros((p, p))
    for i in range(p):
        for j in range(i, p):
            out[i, j] = out[j, i] = lsc.model_covariance(model, specs[i], specs[j], tau_d, days_per_year)
    return out


def covariance_report(model: LscModel, problem: Step1Problem) -> pd.DataFrame:
    """Per rolling contract: market vs model volatility and correlation to the front contract."""
    model_cov = model_covariance_matrix(model, problem.specs, problem.tau_d, problem.days_per_year)
    mkt_vol = np.sqrt(np.maximum(np.diag(problem.c_mkt), 0.0))
    mdl_vol = np.sqrt(np.maximum(np.diag(model_cov), 0.0))
    front_mkt = problem.c_mkt[0] / (mkt_vol[0] * np.where(mkt_vol > 0, mkt_vol, 1.0))
    front_mdl = model_cov[0] / (mdl_vol[0] * np.where(mdl_vol > 0, mdl_vol, 1.0))
    return pd.DataFrame({
        "contract": [s.label for s in problem.specs],
        "market_vol": mkt_vol,
        "model_vol": mdl_vol,
        "market_corr_front": front_mkt,
        "model_corr_front": front_mdl,
    })


def vs_report(model: LscModel, targets: Sequence[VsTarget], correction=None) -> pd.DataFrame:
    rows = []
    for t in targets:
        if correction is None:
            v = lsc.model_vs_variance(model, t.window.start, t.window.end, t.maturity)
        else:
            v = lsc.model_vs_variance_corrected(model, correction, t.window, t.maturity)
        rows.append({"smile": t.label, "maturity": t.maturity, "market_vs_vol": math.sqrt(t.variance),
                     "model_vs_vol": math.sqrt(max(v, 0.0)),
                     "relative_error": (v - t.variance) / t.variance if t.variance else 0.0})
    return pd.DataFrame(rows)
