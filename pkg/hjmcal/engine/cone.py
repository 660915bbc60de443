"""Cone projections, vectorized symmetric matrices and a linear cone program container."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SQRT2 = np.sqrt(2.0)


class ConeKind(str, Enum):
    orthant = "orthant"
    soc = "soc"
    psd = "psd"


# --- symmetric matrix <-> vector (lower triangle, column-major, off-diagonals scaled by sqrt 2) ---

def tril_indices_colmajor(n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    return np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)


def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def svec(m: np.ndarray) -> np.ndarray:
    rows, cols = tril_indices_colmajor(len(m))
    scale = np.where(rows == cols, 1.0, SQRT2)
    return m[rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    n = int(round((np.sqrt(8 * len(v) + 1) - 1) / 2))
    rows, cols = tril_indices_colmajor(n)
    scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
    m = np.zeros((n, n))
    m[rows, cols] = v * scale
    m[cols, rows] = v * scale
    return m


# --- projections ---

def project_orthant(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def project_soc(x: np.ndarray) -> np.ndarray:
    """Projection onto {(t, u): ||u|| <= t}."""
    t, u = float(x[0]), np.asarray(x[1:], dtype=float)
    norm_u = float(np.linalg.norm(u))
    if norm_u <= t:
        return np.asarray(x, dtype=float).copy()
    if norm_u <= -t:
        return np.zeros_like(x, dtype=float)
    scale = 0.5 * (t + norm_u)
    return np.concatenate([[scale], scale * u / norm_u])


def project_psd_matrix(m: np.ndarray) -> np.ndarray:
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    clamped = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return 0.5 * (clamped + clamped.T)


def project_psd(x: np.ndarray) -> np.ndarray:
    """PSD projection; accepts a square matrix or its svec."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return project_psd_matrix(x)
    return svec(project_psd_matrix(smat(x)))


def project_cone(point: np.ndarray, kind: ConeKind | str) -> np.ndarray:
    kind = ConeKind(kind)
    if kind is ConeKind.orthant:
        return project_orthant(np.asarray(point, dtype=float))
    if kind is ConeKind.soc:
        return project_soc(np.asarray(point, dtype=float))
    return project_psd(point)


# --- program container ---

@dataclass
class ConeProgram:
    """minimize c.x subject to G x + s = h, s in orthant(l) x SOC(q...) x PSD(s...), A x = b.

    PSD blocks of order n occupy n(n+1)/2 rows in svec order.
    """
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    l: int
    q: list[int] = field(default_factory=list)
    s: list[int] = field(default_factory=list)

    def dims(self) -> dict[str, object]:
        return {"l": self.l, "q": list(self.q), "s": list(self.s)}

    def _blocks(self):
        offset = 0
        yield ConeKind.orthant, slice(offset, offset + self.l)
        offset += self.l
        for size in self.q:
            yield ConeKind.soc, slice(offset, offset + size)
            offset += size
        for order in self.s:
            size = svec_size(order)
            yield ConeKind.psd, slice(offset, offset + size)
            offset += size

    def certificate(self, x: np.ndarray) -> dict[str, float]:
        """Feasibility of a candidate point: equality residual and distance to the cone."""
        x = np.asarray(x, dtype=float)
        slack = self.h - self.G @ x
        distance = 0.0
        for kind, block in self._blocks():
            part = slack[block]
            if part.size:
                distance = max(distance, float(np.linalg.norm(part - project_cone(part, kind))))
        eq = float(np.max(np.abs(self.A @ x - self.b))) if len(self.b) else 0.0
        return {"objective": float(self.c @ x), "equality_residual": eq, "cone_distance": distance}
