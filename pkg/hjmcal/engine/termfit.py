"""Step 2: exact variance-swap term-structure correction.

Smiles are split into a g-group (one maturity per contract, delivery windows linearly
independent) that fixes the delivery-time correction g(T), and an h-group (distinct
maturities) that fixes the calendar-time correction h(t). The two are coupled and solved
by fixed-point iteration.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import optimize

from ..errors import NegativeIncrement, NoConvergence, NoPositiveRoot, NoValidGrouping
from ..models import ContractKind, DeliveryWindow, LscModel, TermCorrection, VsTarget
from . import lsc

logger = logging.getLogger("hjmcal.termfit")

_EDGE_TOL = 1e-12
_MAX_FLIPS_LARGE = 3


@dataclass
class SmileGrouping:
    g_group: list[VsTarget]
    h_group: list[VsTarget]

    def labels(self) -> dict[str, list[str]]:
        return {"g": [t.label for t in self.g_group], "h": [t.label for t in self.h_group]}


# --- grouping ---

def _laminar(windows: Sequence[DeliveryWindow]) -> bool:
    for a, b in itertools.combinations(windows, 2):
        if a.overlaps(b) and not (a.contains(b) or b.contains(a)):
            return False
    return True


def _independent(windows: Sequence[DeliveryWindow]) -> bool:
    if len(windows) <= 1:
        return True
    edges = sorted({w.start for w in windows} | {w.end for w in windows})
    mids = [0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])]
    m = np.array([[1.0 if w.start <= x < w.end else 0.0 for x in mids] for w in windows])
    return int(np.linalg.matrix_rank(m)) == len(windows)


def grouping_violations(grouping: SmileGrouping) -> list[str]:
    out = []
    ids = [t.contract_id for t in grouping.g_group]
    if len(set(ids)) != len(ids):
        out.append("one maturity per futures")
    windows = [t.window for t in grouping.g_group]
    if not _independent(windows):
        out.append("linear independence")
    if not _laminar(windows):
        out.append("nested or disjoint delivery periods")
    mats = sorted(t.maturity for t in grouping.h_group)
    if any(b - a <= _EDGE_TOL for a, b in zip(mats[:-1], mats[1:])):
        out.append("no coinciding maturities")
    return out


def _default_split(targets: Sequence[VsTarget]) -> list[bool]:
    """True marks g-group: month/quarter-like contracts keep their last maturity in g."""
    in_g = [False] * len(targets)
    chosen: dict[str, int] = {}
    for i, t in enumerate(targets):
        kind = ContractKind.from_duration(t.window.length * 365.0)
        if kind in (ContractKind.calendar, ContractKind.other):
            continue
        j = chosen.get(t.contract_id)
        if j is None or t.maturity > targets[j].maturity:
            chosen[t.contract_id] = i
    for i in chosen.values():
        in_g[i] = True
    return in_g


def _split(targets: Sequence[VsTarget], in_g: Sequence[bool]) -> SmileGrouping:
    return SmileGrouping(
        g_group=[t for t, g in zip(targets, in_g) if g],
        h_group=[t for t, g in zip(targets, in_g) if not g],
    )


def assign_groups(targets: Sequence[VsTarget], policy: str = "default") -> SmileGrouping:
    if not targets:
        raise NoValidGrouping("no smiles to group")
    if len(targets) == 1:
        return SmileGrouping(g_group=list(targets), h_group=[])
    if policy in ("all-g", "all-h"):
        grouping = _split(targets, [policy == "all-g"] * len(targets))
        problems = grouping_violations(grouping)
        if problems:
            raise NoValidGrouping(f"{policy} grouping violates: {', '.join(problems)}")
        return grouping
    if policy != "default":
        raise ValueError(f"Unknown grouping policy: {policy}")

    base = _default_split(targets)
    n = len(targets)
    max_flips = n if n <= 12 else _MAX_FLIPS_LARGE
    for flips in range(max_flips + 1):
        for idx in itertools.combinations(range(n), flips):
            in_g = list(base)
            for i in idx:
                in_g[i] = not in_g[i]
            grouping = _split(targets, in_g)
            if not grouping_violations(grouping):
                if flips:
                    moved = [targets[i].label for i in idx]
                    logger.info(f"Grouping repaired by moving {moved}")
                return grouping
    raise NoValidGrouping(f"no grouping of {n} smiles meets the grouping conditions",
                          payload={"default": _split(targets, base).labels()})


# --- layout ---

@dataclass
class _TargetLayout:
    target: VsTarget
    sub_elements: np.ndarray  # element index per sub-interval, -1 outside g support
    pieces: list[tuple[int, np.ndarray]]  # (h piece index, Gram matrix over sub-intervals)


class TermStructureProblem:
    """Precomputed Gram blocks so every pass is pure linear algebra."""

    def __init__(self, model: LscModel, grouping: SmileGrouping):
        self.model = model
        self.grouping = grouping
        self.basis = lsc.StateBasis.from_model(model)
        self.x = lsc.state_covariance(model, self.basis)

        g_windows = [t.window for t in grouping.g_group]
        self.g_knots = sorted({w.start for w in g_windows} | {w.end for w in g_windows})
        self.elements = list(zip(self.g_knots[:-1], self.g_knots[1:]))
        self.owner = np.full(len(self.elements), -1, dtype=int)
        for e, (a, b) in enumerate(self.elements):
            mid = 0.5 * (a + b)
            holders = [i for i, w in enumerate(g_windows) if w.start <= mid < w.end]
            if holders:
                self.owner[e] = min(holders, key=lambda i: g_windows[i].length)
        # inner contracts first
        self.g_order = sorted(range(len(g_windows)), key=lambda i: g_windows[i].length)

        self.h_group = sorted(grouping.h_group, key=lambda t: t.maturity)
        self.h_knots = [0.0] + [t.maturity for t in self.h_group] if self.h_group else []

        self.g_layouts = [self._layout(t) for t in grouping.g_group]
        self.h_layouts = [self._layout(t) for t in self.h_group]

    @property
    def n_h(self) -> int:
        return max(len(self.h_group), 1)

    def _h_pieces(self, maturity: float) -> list[tuple[int, float, float]]:
        if not self.h_knots:
            return [(0, 0.0, maturity)]
        out = []
        for m, (a, b) in enumerate(zip(self.h_knots[:-1], self.h_knots[1:])):
            if a >= maturity - _EDGE_TOL:
                break
            last = m == len(self.h_knots) - 2
            hi = maturity if last else min(b, maturity)
            out.append((m, a, hi))
        return out

    def _layout(self, target: VsTarget) -> _TargetLayout:
        w = target.window
        cuts = [k for k in self.g_knots if w.start + _EDGE_TOL < k < w.end - _EDGE_TOL]
        edges = [w.start, *cuts, w.end]
        subs, phis = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (a + b)
            e = next((i for i, (lo, hi) in enumerate(self.elements) if lo <= mid < hi), -1)
            subs.append(e if e >= 0 and self.owner[e] >= 0 else -1)
            loads = lsc.state_loadings(self.basis, DeliveryWindow(start=a, end=b))
            phis.append((b - a) / w.length * np.exp(-self.basis.rates * (a - w.start)) * loads)
        phi = np.asarray(phis)
        pieces = []
        for m, t1, t2 in self._h_pieces(target.maturity):
            cross = lsc.normalized_cross(self.basis, t1, t2)
            anchored = phi * lsc.anchor(self.basis, t2, w.start)[None, :]
            gram = anchored @ (self.x * cross) @ anchored.T
            pieces.append((m, 0.5 * (gram + gram.T)))
        return _TargetLayout(target=target, sub_elements=np.asarray(subs, dtype=int), pieces=pieces)

    # g as one value per g-group contract, expanded to sub-intervals
    def _sub_values(self, layout: _TargetLayout, g: np.ndarray) -> np.ndarray:
        out = np.ones(len(layout.sub_elements))
        for s, e in enumerate(layout.sub_elements):
            if e >= 0:
                out[s] = g[self.owner[e]]
        return out

    def integral(self, layout: _TargetLayout, g: np.ndarray, h: np.ndarray) -> float:
        v = self._sub_values(layout, g)
        return float(sum(h[m] ** 2 * (v @ gram @ v) for m, gram in layout.pieces))

    def strip_h(self, g: np.ndarray) -> np.ndarray:
        if not self.h_group:
            return np.ones(1)
        h = np.ones(len(self.h_group))
        for j, layout in enumerate(self.h_layouts):
            v = self._sub_values(layout, g)
            grams = dict(layout.pieces)
            done = sum(h[m] ** 2 * (v @ grams[m] @ v) for m in range(j))
            increment = layout.target.total_variance - done
            own = float(v @ grams[j] @ v)
            if increment <= 0 or own <= 0:
                raise NegativeIncrement(
                    f"{layout.target.label}: variance-swap increment {increment:.3g} is not positive",
                    payload={"h": h[:j].tolist()},
                )
            h[j] = math.sqrt(increment / own)
        return h

    def solve_g(self, h: np.ndarray, previous: Optional[np.ndarray] = None) -> np.ndarray:
        n = len(self.grouping.g_group)
        g = np.ones(n) if previous is None else previous.copy()
        prev = np.ones(n) if previous is None else previous
        for i in self.g_order:
            layout = self.g_layouts[i]
            target = layout.target.total_variance
            known = self._sub_values(layout, g)
            own = np.array([e >= 0 and self.owner[e] == i for e in layout.sub_elements])
            a_vec = np.where(own, 0.0, known)
            b_vec = own.astype(float)
            a2 = a1 = a0 = 0.0
            for m, gram in layout.pieces:
                w = h[m] ** 2
                a2 += w * (b_vec @ gram @ b_vec)
                a1 += w * (a_vec @ gram @ b_vec)
                a0 += w * (a_vec @ gram @ a_vec)
            g[i] = _positive_root(a2, a1, a0 - target, prev[i], layout.target.label)
        return g

    def correction(self, g: np.ndarray, h: np.ndarray, smooth: bool = False) -> TermCorrection:
        g_values = [float(g[o]) if o >= 0 else 1.0 for o in self.owner]
        if not self.h_group:
            return TermCorrection(g_knots=list(self.g_knots), g_values=g_values, smooth=smooth)
        return TermCorrection(
            g_knots=list(self.g_knots), g_values=g_values,
            h_knots=list(self.h_knots), h_values=[float(v) for v in h], smooth=smooth,
        )


def _positive_root(a2: float, a1: float, c: float, previous: float, label: str) -> float:
    """Positive root of a2 u^2 + 2 a1 u + c = 0."""
    if a2 <= 0:
        raise NoPositiveRoot(f"{label}: contract carries no own variance")
    disc = a1 * a1 - a2 * c
    if disc < 0:
        raise NoPositiveRoot(f"{label}: quadratic has no real root (discriminant {disc:.3g})")
    sq = math.sqrt(disc)
    roots = [r for r in ((-a1 + sq) / a2, (-a1 - sq) / a2) if r > 0]
    if not roots:
        raise NoPositiveRoot(f"{label}: inconsistent variance-swap data, no positive root")
    if len(roots) == 2 and abs(roots[0] - roots[1]) > 1e-14 * max(roots):
        logger.warning(f"{label}: two positive roots {roots[0]:.6g}, {roots[1]:.6g}; keeping the one closer to {previous:.6g}")
        return min(roots, key=lambda r: abs(r - previous))
    return roots[0]


# --- public operations ---

def strip_h(g: np.ndarray, grouping: SmileGrouping, model: LscModel) -> np.ndarray:
    return TermStructureProblem(model, grouping).strip_h(np.asarray(g, dtype=float))


def solve_g(h: np.ndarray, grouping: SmileGrouping, model: LscModel) -> np.ndarray:
    return TermStructureProblem(model, grouping).solve_g(np.asarray(h, dtype=float))


@dataclass
class FixedPointResult:
    correction: TermCorrection
    g: np.ndarray
    h: np.ndarray
    iterations: int
    log: pd.DataFrame = field(default_factory=pd.DataFrame)


def _max_residual(problem: TermStructureProblem, g: np.ndarray, h: np.ndarray) -> float:
    worst = 0.0
    for layout in problem.g_layouts + problem.h_layouts:
        target = layout.target.total_variance
        worst = max(worst, abs(problem.integral(layout, g, h) - target) / target)
    return worst


def fixed_point(grouping: SmileGrouping, model: LscModel, eps: float = 1e-10, max_iter: int = 100,
                smooth: bool = False, start: Optional[np.ndarray] = None,
                problem: Optional[TermStructureProblem] = None) -> FixedPointResult:
    problem = problem or TermStructureProblem(model, grouping)
    g = np.ones(len(grouping.g_group)) if start is None else np.asarray(start, dtype=float).copy()
    h = np.ones(problem.n_h)
    rows = []
    for it in range(1, max_iter + 1):
        h = problem.strip_h(g)
        g_new = problem.solve_g(h, g)
        step = float(np.max(np.abs(g_new - g))) if len(g) else 0.0
        g = g_new
        rows.append({"iteration": it, "g_step": step, "max_vs_residual": _max_residual(problem, g, h)})
        logger.debug(f"fixed point pass {it}: |dg|={step:.3e}")
        if step <= eps:
            break
    else:
        raise NoConvergence(
            f"fixed point not reached in {max_iter} iterations (last step {rows[-1]['g_step']:.3g})",
            payload={"g": g.tolist(), "h": h.tolist(), "log": rows},
        )
    h = problem.strip_h(g)
    log = pd.DataFrame(rows)
    correction = problem.correction(g, h)
    logger.info(f"Step 2 converged in {len(rows)} iteration(s), max VS residual {_max_residual(problem, g, h):.2e}")
    result = FixedPointResult(correction=correction, g=g, h=h, iterations=len(rows), log=log)
    if smooth:
        result = resolve_smoothed(result, problem)
    return result


# --- smoothing ---

def smooth(correction: TermCorrection) -> TermCorrection:
    """Monotone cubic through the piece mid-points."""
    return correction.model_copy(update={"smooth": True})


def resolve_smoothed(result: FixedPointResult, problem: TermStructureProblem, tol: float = 1e-8) -> FixedPointResult:
    """Re-solve piece values so that the smoothed g and h still match every target."""
    targets = [l.target for l in problem.g_layouts + problem.h_layouts]
    n_g = len(result.g)
    has_h = bool(problem.h_group)

    def build(z: np.ndarray) -> TermCorrection:
        v = np.exp(z)
        h = v[n_g:] if has_h else np.ones(1)
        return smooth(problem.correction(v[:n_g], h))

    def residuals(z: np.ndarray) -> np.ndarray:
        corr = build(z)
        return np.array([
            lsc.model_vs_variance_corrected(problem.model, corr, t.window, t.maturity) / t.variance - 1.0
            for t in targets
        ])

    z0 = np.log(np.concatenate([result.g, result.h if has_h else []]))
    sol = optimize.root(residuals, z0, method="hybr", options={"xtol": 1e-13})
    worst = float(np.max(np.abs(residuals(sol.x)))) if len(z0) else 0.0
    if worst > tol:
        raise NoConvergence(f"smoothed re-solve left a relative VS residual of {worst:.3g}",
                            payload={"g": result.g.tolist(), "h": result.h.tolist()})
    v = np.exp(sol.x)
    g, h = v[:n_g], (v[n_g:] if has_h else np.ones(1))
    log = pd.concat([result.log, pd.DataFrame([{"iteration": result.iterations + 1, "g_step": float(np.max(np.abs(g - result.g))) if n_g else 0.0,
                                                  "max_vs_residual": worst}])], ignore_index=True)
    return FixedPointResult(correction=build(sol.x), g=g, h=h, iterations=result.iterations, log=log)


# --- diagnostics ---

def vs_residuals(correction: TermCorrection, targets: Sequence[VsTarget], model: LscModel) -> pd.Series:
    values = {
        t.label: lsc.model_vs_variance_corrected(model, correction, t.window, t.maturity) / t.variance - 1.0
        for t in targets
    }
    return pd.Series(values, name="relative_residual")


@dataclass
class ExistenceCheck:
    holds: Optional[bool]
    ratio: float = float("nan")

    @property
    def margin(self) -> float:
        return 1.0 - self.ratio


def check_existence(grouping: SmileGrouping, model: LscModel) -> ExistenceCheck:
    """Sufficient condition for a fixed point; ``holds`` is None outside its scope.

    Scope: every h-group smile on one underlying and no nesting among g-group contracts.
    """
    if not grouping.h_group:
        return ExistenceCheck(holds=None)
    underlyings = {t.contract_id for t in grouping.h_group}
    g_windows = [t.window for t in grouping.g_group]
    nested = any(a.contains(b) or b.contains(a) for a, b in itertools.combinations(g_windows, 2))
    if len(underlyings) != 1 or nested:
        return ExistenceCheck(holds=None)

    h_sorted = sorted(grouping.h_group, key=lambda t: t.maturity)
    outer = h_sorted[0].window
    inner = [t for t in grouping.g_group if outer.contains(t.window)]
    if not inner:
        return ExistenceCheck(holds=True, ratio=0.0)
    knots = [0.0] + [t.maturity for t in h_sorted]
    increments = np.diff([0.0] + [t.total_variance for t in h_sorted])
    omega = np.array([t.window.length / outer.length for t in inner])

    q_norms = []
    for a, b in zip(knots[:-1], knots[1:]):
        q = np.array([[lsc.integrated_covariance(model, ti.window, tj.window, a, b) for tj in inner] for ti in inner])
        q = q * np.outer(omega, omega)
        if np.any(q <= 0):
            return ExistenceCheck(holds=None)
        q_norms.append(float(np.linalg.norm(q, 2)))

    ratio = 0.0
    for t in inner:
        denom = 0.0
        for k, (a, b) in enumerate(zip(knots[:-1], knots[1:])):
            hi = min(b, t.maturity)
            if hi <= a:
                continue
            s_ik = lsc.integrated_covariance(model, t.window, t.window, a, hi)
            denom += increments[k] * s_ik / q_norms[k]
        ratio += t.total_variance / denom if denom > 0 else math.inf
    return ExistenceCheck(holds=bool(ratio < 1.0), ratio=float(ratio))


def stability_probe(result: FixedPointResult, grouping: SmileGrouping, model: LscModel,
                    perturbation: float = 0.01, eps: float = 1e-10, max_iter: int = 200) -> float:
    """Distance between the fixed point and the one reached from a perturbed g."""
    if not len(result.g):
        return 0.0
    signs = np.where(np.arange(len(result.g)) % 2 == 0, 1.0, -1.0)
    start = result.g * (1.0 + perturbation * signs)
    again = fixed_point(grouping, model, eps=eps, max_iter=max_iter, start=start)
    return float(np.max(np.abs(again.g - result.g)))


def calibrate_step2(targets: Sequence[VsTarget], model: LscModel, policy: str = "default",
                    eps: float = 1e-10, max_iter: int = 100, smooth: bool = False) -> tuple[FixedPointResult, SmileGrouping]:
    grouping = assign_groups(targets, policy)
    check = check_existence(grouping, model)
    if check.holds is False:
        logger.warning(f"fixed-point existence condition fails (ratio {check.ratio:.3g}); iterating anyway")
    return fixed_point(grouping, model, eps=eps, max_iter=max_iter, smooth=smooth), grouping
