"""Static SVG figures.

Figures are drawn with matplotlib's object API (no pyplot global state) and
written with a fixed hash salt and no date stamp, so identical data gives
byte-identical files.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

_RC = {"svg.hashsalt": "spirecon", "svg.fonttype": "none", "font.size": 9}


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def line_plot(path, series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
              xlabel: str, ylabel: str, title: str = "", logx: bool = False,
              logy: bool = False, xticklabels: Sequence[str] | None = None) -> None:
    """One polyline per entry of ``series`` (label -> (x, y)), with a legend.

    ``xticklabels`` names the integer positions ``0..k-1`` for categorical grids.
    """
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0, 3.4))
        ax = fig.add_subplot()
        for label, (x, y) in series.items():
            y = np.asarray(y, dtype=float)
            ax.plot(np.asarray(x, dtype=float), y, marker="o" if len(y) < 30 else None,
                    markersize=3, linewidth=1.2, label=label)
        if xticklabels is not None:
            ax.set_xticks(range(len(xticklabels)), list(xticklabels))
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, linewidth=0.3)
        if series:
            ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        _save(fig, path)


def image_row(path, images: Mapping[str, np.ndarray], title: str = "") -> None:
    """Grayscale panels side by side, each on a fixed [0, 1] scale."""
    with matplotlib.rc_context(_RC):
        k = max(len(images), 1)
        fig = Figure(figsize=(1.8 * k, 2.1))
        for i, (label, img) in enumerate(images.items()):
            ax = fig.add_subplot(1, k, i + 1)
            ax.imshow(np.asarray(img, dtype=float), cmap="gray", vmin=0.0, vmax=1.0,
                      interpolation="nearest")
            ax.set_title(label, fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title, fontsize=9)
        fig.tight_layout()
        _save(fig, path)
