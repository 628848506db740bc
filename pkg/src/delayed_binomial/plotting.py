"""Figure rendering for smile and convergence reports (files only, Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (6.4, 4.0)
DPI = 120


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_smile(points: list, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for attr, label, marker in (("iv_call", "call", "o"), ("iv_put", "put", "s")):
        xs = [p.strike for p in points if getattr(p, attr) is not None]
        ys = [getattr(p, attr) for p in points if getattr(p, attr) is not None]
        ax.plot(xs, ys, marker=marker, markersize=3, linewidth=1, label=label)
    ax.set_xlabel("strike")
    ax.set_ylabel("implied volatility")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_convergence(rows: list, path) -> Path:
    valid = [r for r in rows if r.valid]
    fig, (left, right) = plt.subplots(1, 2, figsize=(FIGSIZE[0] * 1.6, FIGSIZE[1]))
    ns = [r.n for r in valid]
    left.loglog(ns, [abs(r.res_pu) or math.nan for r in valid], marker="o", label="|res_pu|")
    left.loglog(ns, [abs(r.res_pd) or math.nan for r in valid], marker="s", label="|res_pd|")
    left.set_xlabel("n")
    left.set_ylabel("expansion residual")
    left.legend(frameon=False)
    left.grid(alpha=0.3, which="both")
    right.semilogx(ns, [r.gap for r in valid], marker="o")
    right.axhline(0.0, color="0.5", linewidth=0.8)
    right.set_xlabel("n")
    right.set_ylabel("model price - BS price (enlarged vol)")
    right.grid(alpha=0.3, which="both")
    return _finish(fig, path)
