"""SVG figures for the CLI.  Write-only: nothing here is read back."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .field import ScalarField, grid_axes  # noqa: E402

_MARK = {0: ("v", "tab:blue"), 1: ("x", "k"), 2: ("^", "tab:red")}

plt.rcParams.update({"font.size": 9, "axes.linewidth": 0.6, "svg.hashsalt": "hamcohom",
                     "svg.fonttype": "none"})


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return path


def contour_svg(path, f: ScalarField, critical_points=(), reeb=None, n: int = 256) -> Path:
    """Level sets of ``f`` with critical points; Reeb edges shaded when given."""
    xs, ys = grid_axes(f.domain, n)
    X, Y = np.meshgrid(xs, ys)
    F = f(X, Y)
    if not f.domain.periodic:
        F = np.where(f.domain.contains(X, Y), F, np.nan)
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    if reeb is not None and reeb.edge_raster is not None:
        lab = reeb.edge_at(X, Y).astype(float)
        lab[lab < 0] = np.nan
        ax.pcolormesh(xs, ys, lab, cmap="Pastel1", shading="auto", rasterized=True)
    ax.contour(xs, ys, F, levels=24, colors="0.35", linewidths=0.5)
    for cp in critical_points:
        m, c = _MARK[cp.morse_index]
        ax.plot(*cp.location, m, color=c, ms=6)
        for sad in ([cp] if cp.morse_index == 1 else []):
            ax.contour(xs, ys, F, levels=[sad.value], colors="k", linewidths=1.0)
    ax.set_aspect("equal")
    ax.set_xlabel("$x$")
    ax.set_ylabel("$y$")
    return _save(fig, path)


def field_svg(path, values: np.ndarray, axes, title: str = "", log: bool = False,
              cmap: str = "RdBu_r") -> Path:
    xs, ys = axes
    v = np.array(values, dtype=float)
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    if log:
        v = np.log10(np.maximum(np.abs(v), 1e-18))
        cmap = "viridis"
        title = title + r" ($\log_{10}$)"
    lim = np.nanmax(np.abs(v)) if not log else None
    im = ax.pcolormesh(xs, ys, v, cmap=cmap, shading="auto", rasterized=True,
                       vmin=None if log else -lim, vmax=None if log else lim)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.set_xlabel("$x$")
    ax.set_ylabel("$y$")
    return _save(fig, path)


def cycle_integrals_svg(path, report) -> Path:
    """Normalised cycle integrals per Reeb edge against the level."""
    fig, ax = plt.subplots(figsize=(4.6, 3.0))
    for row in report.cycle_integrals.details:
        s = np.array(row["samples"], dtype=float)
        if s.size:
            ax.plot(s[:, 0], s[:, 1], ".-", lw=0.7, ms=3, label=f"edge {row['edge']}")
    ax.axhline(0.0, color="0.5", lw=0.5)
    ax.set_xlabel("level $c$")
    ax.set_ylabel(r"$\int_s u\,/\,\tau(s)$")
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)
