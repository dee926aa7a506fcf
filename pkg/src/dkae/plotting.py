"""Report figures rendered off-screen with the Agg backend.

Each helper writes one PNG next to the CSV it illustrates. Figures are
built on explicit ``Figure`` objects, so nothing touches pyplot state and
the functions are safe to call from worker processes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=_META)
    return path


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "", logx: bool = False,
              hlines: dict | None = None) -> Path:
    """One line per entry of ``series``; ``hlines`` adds labelled horizontal references."""
    fig = Figure(figsize=(5.5, 4))
    ax = fig.add_subplot()
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", ms=3, label=label)
    for label, y in (hlines or {}).items():
        ax.axhline(y, ls="--", color="k", lw=1, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def scatter_plot(path, xy, labels, title: str = "") -> Path:
    xy = np.asarray(xy)
    labels = np.asarray(labels)
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot()
    for c in np.unique(labels):
        pts = xy[labels == c]
        ax.scatter(pts[:, 0], pts[:, 1], s=6, label=str(c))
    ax.legend(markerscale=2, fontsize=7, ncol=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def kernel_panels(path, kernels: dict, labels=None) -> Path:
    """Heat maps of square matrices, rows and columns sorted by label when given."""
    order = None if labels is None else np.argsort(np.asarray(labels), kind="stable")
    fig = Figure(figsize=(3.2 * len(kernels), 3.2))
    for i, (name, k) in enumerate(kernels.items(), start=1):
        k = np.asarray(k)
        if order is not None:
            k = k[np.ix_(order, order)]
        ax = fig.add_subplot(1, len(kernels), i)
        ax.imshow(k, cmap="viridis", interpolation="nearest")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def image_grid(path, rows: dict, image_shape) -> Path:
    """Rows of greyscale images; ``rows`` maps a row title to an (n, d) array."""
    names = list(rows)
    n = max(np.asarray(r).shape[0] for r in rows.values())
    fig = Figure(figsize=(1.1 * n + 0.8, 1.2 * len(names)))
    for r, name in enumerate(names):
        imgs = np.asarray(rows[name])
        for c in range(imgs.shape[0]):
            ax = fig.add_subplot(len(names), n, r * n + c + 1)
            ax.imshow(imgs[c].reshape(image_shape), cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if c == 0:
                ax.set_ylabel(name, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def bar_plot(path, values: dict, ylabel: str, title: str = "") -> Path:
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    names = list(values)
    ax.bar(names, [values[k] for k in names], color="tab:blue")
    lo = min(values.values())
    ax.set_ylim(max(0.0, lo - 0.1), 1.0 if max(values.values()) <= 1 else None)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
