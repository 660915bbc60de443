"""Report emission: CSV tables, SVG/PNG plots and a PNG snapshot sheet.

Output is deterministic: SVG ids are salted with a constant and no creation dates or
software tags are written.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .dataio import frame_to_csv  # noqa: E402
from .engine.assembler import assemble_snapshot  # noqa: E402
from .models import TermCorrection  # noqa: E402
from .storage import StorageBackend  # noqa: E402

logger = logging.getLogger("hjmcal.report")

FORMATS = ("csv", "svg", "png")
plt.rcParams["svg.hashsalt"] = "hjmcal"
plt.rcParams["svg.fonttype"] = "path"


@dataclass
class ReportArtifacts:
    title: str = "Calibration snapshot"
    covariance: Optional[pd.DataFrame] = None  # per rolling contract market/model vol and front correlation
    market_correlation: Optional[pd.DataFrame] = None
    model_correlation: Optional[pd.DataFrame] = None
    pca: Optional[pd.Series] = None
    vs_before: Optional[pd.DataFrame] = None
    vs_after: Optional[pd.DataFrame] = None
    smiles: Optional[pd.DataFrame] = None
    correction: Optional[TermCorrection] = None
    hypercube: Optional[pd.DataFrame] = None
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)


# --- plots ---

def plot_vol_term_structure(a: ReportArtifacts):
    df = a.covariance
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    x = np.arange(len(df))
    ax1.plot(x, df["market_vol"], "o", label="market")
    ax1.plot(x, df["model_vol"], "-", label="model")
    ax1.set_title("Rolling contract volatility")
    ax2.plot(x, df["market_corr_front"], "o", label="market")
    ax2.plot(x, df["model_corr_front"], "-", label="model")
    ax2.set_title("Correlation to front contract")
    for ax in (ax1, ax2):
        ax.set_xticks(x)
        ax.set_xticklabels(df["contract"], rotation=60, fontsize=7)
        ax.legend()
    return fig


def plot_correlations(a: ReportArtifacts):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, frame, name in ((axes[0], a.market_correlation, "market"), (axes[1], a.model_correlation, "model")):
        im = ax.imshow(frame.to_numpy(), vmin=-1.0, vmax=1.0, cmap="RdBu_r")
        ax.set_title(f"{name} correlation")
        ax.set_xticks(range(len(frame)))
        ax.set_yticks(range(len(frame)))
        ax.set_xticklabels(frame.columns, rotation=90, fontsize=6)
        ax.set_yticklabels(frame.index, fontsize=6)
    fig.colorbar(im, ax=axes, shrink=0.8)
    return fig


def plot_pca(a: ReportArtifacts):
    fig, ax = plt.subplots(figsize=(6, 4))
    values = np.asarray(a.pca, dtype=float)
    ax.bar(np.arange(1, len(values) + 1), values)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("components")
    ax.set_title("Cumulative explained variance")
    return fig


def plot_vs_fit(a: ReportArtifacts):
    fig, ax = plt.subplots(figsize=(8, 4))
    base = a.vs_after if a.vs_after is not None else a.vs_before
    x = np.arange(len(base))
    ax.plot(x, base["market_vs_vol"], "o", label="market")
    if a.vs_before is not None:
        ax.plot(x, a.vs_before["model_vs_vol"], "x--", label="step 1")
    if a.vs_after is not None:
        ax.plot(x, a.vs_after["model_vs_vol"], "-", label="step 2")
    ax.set_xticks(x)
    ax.set_xticklabels(base["smile"], rotation=60, fontsize=7)
    ax.set_title("Variance swap volatility")
    ax.legend()
    return fig


def plot_smiles(a: ReportArtifacts):
    groups = list(a.smiles.groupby("smile", sort=False))
    cols = min(4, len(groups))
    rows = math.ceil(len(groups) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False)
    for ax, (label, g) in zip(axes.flat, groups):
        ax.plot(g["strike"], g["market_iv"], "o", ms=3)
        ax.plot(g["strike"], g["model_iv"], "-")
        ax.set_title(label, fontsize=8)
        ax.tick_params(labelsize=6)
    for ax in list(axes.flat)[len(groups):]:
        ax.axis("off")
    fig.tight_layout()
    return fig


def plot_corrections(a: ReportArtifacts):
    corr = a.correction
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, knots, fn, name in ((ax1, corr.g_knots, corr.g, "g (delivery time)"),
                                (ax2, corr.h_knots, corr.h, "h (calendar time)")):
        if knots:
            grid = np.linspace(0.0, knots[-1] * 1.1, 400)
        else:
            grid = np.linspace(0.0, 1.0, 2)
        ax.plot(grid, fn(grid))
        ax.axhline(1.0, color="grey", lw=0.5)
        ax.set_title(name)
    return fig


def plot_hypercube(a: ReportArtifacts):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    colors = {"M": "green", "Q": "blue", "C": "black", "D": "orange"}
    for label, g in a.hypercube.groupby("window", sort=False):
        ax.plot(g["maturity"], g["model_total_variance"], "-", color=colors.get(str(label)[0], "grey"), lw=0.8)
        if "market_total_variance" in g and g["market_total_variance"].notna().any():
            ax.plot(g["maturity"], g["market_total_variance"], "o", color=colors.get(str(label)[0], "grey"), ms=3)
    ax.set_xlabel("maturity")
    ax.set_title("Integrated variance")
    return fig


# (name, caption, present, plot)
SECTIONS: list[tuple[str, str, Callable[[ReportArtifacts], bool], Callable]] = [
    ("vol_term_structure", "Volatility and correlation term structure", lambda a: a.covariance is not None,
     plot_vol_term_structure),
    ("correlation", "Correlation fit",
     lambda a: a.market_correlation is not None and a.model_correlation is not None, plot_correlations),
    ("pca", "Explained variance", lambda a: a.pca is not None and len(a.pca) > 0, plot_pca),
    ("vs_fit", "Variance swap fit", lambda a: a.vs_before is not None or a.vs_after is not None, plot_vs_fit),
    ("smiles", "Smile fit", lambda a: a.smiles is not None and not a.smiles.empty, plot_smiles),
    ("corrections", "Term-structure corrections", lambda a: a.correction is not None, plot_corrections),
    ("hypercube", "Integrated variance hypercube", lambda a: a.hypercube is not None and not a.hypercube.empty,
     plot_hypercube),
]


def _render(fig, fmt: str) -> bytes:
    buf = io.BytesIO()
    metadata = {"Date": None} if fmt == "svg" else {"Software": None}
    fig.savefig(buf, format=fmt, metadata=metadata, dpi=100)
    plt.close(fig)
    return buf.getvalue()


def tables_of(a: ReportArtifacts) -> dict[str, pd.DataFrame]:
    out = dict(a.tables)
    if a.covariance is not None:
        out["covariance_fit"] = a.covariance
    if a.vs_before is not None:
        out["vs_fit_step1"] = a.vs_before
    if a.vs_after is not None:
        out["vs_fit_step2"] = a.vs_after
    if a.smiles is not None and not a.smiles.empty:
        out["smile_fit"] = a.smiles
    if a.hypercube is not None and not a.hypercube.empty:
        out["hypercube"] = a.hypercube
    return out


def emit_report(artifacts: ReportArtifacts, storage: StorageBackend, formats: Sequence[str] = ("csv", "svg"),
                prefix: str = "report") -> list[str]:
    """Write the requested formats; sections without data are skipped. Returns stored keys."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"Unknown report format(s): {sorted(unknown)}")
    keys: list[str] = []
    if "csv" in formats:
        for name, frame in sorted(tables_of(artifacts).items()):
            key = f"{prefix}/{name}.csv"
            index = not isinstance(frame.index, pd.RangeIndex)
            storage.save(key, frame_to_csv(frame, index=index).encode(), "text/csv")
            keys.append(key)

    tiles: list[tuple[bytes, str]] = []
    for name, caption, present, plot in SECTIONS:
        if not present(artifacts):
            logger.debug(f"report section {name} omitted (no data)")
            continue
        for fmt in ("svg", "png"):
            if fmt not in formats:
                continue
            data = _render(plot(artifacts), fmt)
            key = f"{prefix}/{name}.{fmt}"
            storage.save(key, data, f"image/{'svg+xml' if fmt == 'svg' else 'png'}")
            keys.append(key)
            if fmt == "png":
                tiles.append((data, caption))

    if tiles:
        key = f"{prefix}/snapshot.png"
        storage.save(key, assemble_snapshot(tiles, artifacts.title), "image/png")
        keys.append(key)
    logger.info(f"Report: {len(keys)} file(s) under {prefix}/")
    return keys
