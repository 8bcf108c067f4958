"""Optional PNG figures for CLI studies. Imported only behind ``--figures``."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

from .geometry import Microstructure  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_microstructure(ms: Microstructure, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6 * ms.domain.ly / ms.domain.lx))
    _draw(ax, ms)
    return _save(fig, path)


def _draw(ax, ms: Microstructure):
    d = ms.domain
    circles = []
    shifts = [(0.0, 0.0)]
    if d.periodic:
        shifts = [(sx * d.lx, sy * d.ly) for sx in (-1, 0, 1) for sy in (-1, 0, 1)]
    for (x, y), r in zip(ms.centers, ms.radii):
        for sx, sy in shifts:
            cx, cy = x + sx, y + sy
            if -r < cx < d.lx + r and -r < cy < d.ly + r:
                circles.append(Circle((cx, cy), r))
    ax.add_collection(PatchCollection(circles, facecolor="0.3", edgecolor="none"))
    ax.add_patch(Rectangle((0, 0), d.lx, d.ly, fill=False, edgecolor="k", lw=1))
    ax.set_xlim(0, d.lx)
    ax.set_ylim(0, d.ly)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_equivalence(micrograph: Microstructure, rve: Microstructure, path) -> Path:
    """Measured window and one equivalent RVE side by side, each in its own units."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    for ax, ms, title in ((axes[0], micrograph, "micrograph window"), (axes[1], rve, "generated RVE")):
        _draw(ax, ms)
        ax.set_title(f"{title}: n={ms.n}")
    return _save(fig, path)


def plot_min_gap(summary: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    for regime in sorted({r["regime"] for r in summary if r["regime"] != "hexagonal"}):
        rows = sorted((r for r in summary if r["regime"] == regime), key=lambda r: r["min_gap"])
        x = [r["min_gap"] for r in rows]
        ax.errorbar(x, [r["mean"] for r in rows], yerr=[r["std"] for r in rows], marker="o", capsize=3, label=regime)
    for r in summary:
        if r["regime"] == "hexagonal":
            ax.axhline(r["mean"], color="k", ls="--", lw=1, label="hexagonal")
    ax.set_xscale("log")
    ax.set_xlabel("minimum gap / mean radius")
    ax.set_ylabel("E_T / E_m")
    ax.legend()
    return _save(fig, path)


def plot_cloud(cloud: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    pts = cloud["points"]
    sc = ax.scatter([p["vf"] for p in pts], [p["E_norm"] for p in pts], c=[p["mnn"] for p in pts], s=12, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="mean NN gap / R")
    for key, style in (("hexagonal", "k--"), ("upper", "r-")):
        rows = sorted(cloud[key], key=lambda r: r["vf"])
        ax.plot([r["vf"] for r in rows], [r["E_norm"] for r in rows], style, marker="_", ms=14, label=key)
    if cloud.get("depleted"):
        ax.plot([r["vf"] for r in cloud["depleted"]], [r["E_norm"] for r in cloud["depleted"]], "bs", label="depleted")
    ax.set_xlabel("fiber volume fraction")
    ax.set_ylabel("E_T / E_m")
    ax.legend()
    return _save(fig, path)


def plot_mnn(rows: list[dict], fit, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.array([r["mnn"] for r in rows])
    ax.plot(x, [r["E_norm"] for r in rows], "o", ms=4)
    xs = np.linspace(x.min(), x.max(), 2)
    ax.plot(xs, fit.intercept + fit.slope * xs, "k-", label=f"R² = {fit.r_squared:.3f}")
    ax.set_xlabel("mean NN gap / R")
    ax.set_ylabel("E_T / E_m")
    ax.legend()
    return _save(fig, path)
