"""Figures written next to the CSV tables (PNG, headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(csv_path, suffix: str = "") -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + suffix + ".png")


def _varying_axes(points: np.ndarray) -> list[int]:
    return [k for k in range(points.shape[1]) if len(np.unique(points[:, k])) > 1]


def _grid(points: np.ndarray, values: np.ndarray, axes: Sequence[int]):
    """Reshape scattered grid data onto its tensor axes (missing cells are NaN)."""
    a, b = axes
    xs = np.unique(points[:, a])
    ys = np.unique(points[:, b])
    Z = np.full((len(ys), len(xs)), np.nan)
    ix = np.searchsorted(xs, points[:, a])
    iy = np.searchsorted(ys, points[:, b])
    Z[iy, ix] = values
    return xs, ys, Z


def plot_hierarchy(orders: Sequence[int], bounds: Sequence[float], path, oracle: float | None = None,
                   title: str = "") -> Path | None:
    """Bound versus relaxation order; a dashed line marks the exact value when known."""
    ok = [(r, b) for r, b in zip(orders, bounds) if b is not None and np.isfinite(b)]
    if not ok:
        return None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot([r for r, _ in ok], [b for _, b in ok], "o-", label="lower bound")
    if oracle is not None and np.isfinite(oracle):
        ax.axhline(oracle, ls="--", color="k", lw=1, label="exact")
    ax.set_xlabel("relaxation order r")
    ax.set_ylabel("bound")
    ax.set_xticks([r for r, _ in ok])
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_sweep(points: np.ndarray, bounds: np.ndarray, infeasible: np.ndarray, path,
               ratio: np.ndarray | None = None, names: Sequence[str] = (), title: str = "") -> Path | None:
    """Level sets of the ratio (or the bound) over a 2-D sweep; certified points hatched in black."""
    points = np.asarray(points, dtype=float)
    axes = _varying_axes(points)
    if len(axes) != 2:
        return None
    shown = ratio if ratio is not None else bounds
    xs, ys, Z = _grid(points, np.where(infeasible, np.nan, shown), axes)
    _, _, F = _grid(points, infeasible.astype(float), axes)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if np.isfinite(Z).sum() >= 4 and len(xs) > 1 and len(ys) > 1:
        levels = np.linspace(0, 1, 11) if ratio is not None else 12
        cs = ax.contourf(xs, ys, Z, levels=levels, cmap="gray")
        fig.colorbar(cs, ax=ax, label="bound / exact" if ratio is not None else "bound")
    if np.any(F == 1.0):
        ax.contourf(xs, ys, np.where(F == 1.0, 1.0, np.nan), levels=[0.5, 1.5], colors="k")
        X, Y = np.meshgrid(xs, ys)
        ax.plot(X[F == 1.0], Y[F == 1.0], "k.", ms=2, label="certified unreachable")
        ax.legend(loc="upper left", fontsize=8)
    ax.set_xlabel(names[axes[0]] if names else f"x{axes[0] + 1}")
    ax.set_ylabel(names[axes[1]] if names else f"x{axes[1] + 1}")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_value_gap(points: np.ndarray, values: np.ndarray, gaps: np.ndarray, path,
                   names: Sequence[str] = (), title: str = "") -> Path | None:
    """Level sets of ``Lambda - T`` (or of ``Lambda`` alone when no exact time is known)."""
    points = np.asarray(points, dtype=float)
    axes = _varying_axes(points)
    if len(axes) != 2:
        return None
    use_gap = np.isfinite(gaps).any()
    xs, ys, Z = _grid(points, gaps if use_gap else values, axes)
    if len(xs) < 2 or len(ys) < 2:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 4))
    cs = ax.contourf(xs, ys, Z, levels=12, cmap="viridis")
    ax.contour(xs, ys, Z, levels=cs.levels, colors="k", linewidths=0.3)
    fig.colorbar(cs, ax=ax, label="Lambda - T" if use_gap else "Lambda")
    ax.set_xlabel(names[axes[0]] if names else f"x{axes[0] + 1}")
    ax.set_ylabel(names[axes[1]] if names else f"x{axes[1] + 1}")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
