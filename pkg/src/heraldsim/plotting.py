"""Figures for the report: coincidence histograms and the fitted peak."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .analysis import FitResult, expected_shape
from .timetag import Histogram

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}
RAW_COLOR = "tab:blue"
POST_COLOR = "tab:red"
# strip the version string so identical data give byte-identical files
_META = {"Software": None}


def _bars(ax, hist: Histogram, scale: float, **kw):
    ax.bar(
        hist.centers * scale,
        hist.counts,
        width=hist.bin_width * scale,
        align="center",
        linewidth=0,
        **kw,
    )


def plot_coincidences(raw: Histogram, post: Histogram | None, path) -> None:
    """Raw (blue) and post-selected (red) APD-PMT delay histograms, delay in µs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        _bars(ax, raw, 1e-6, color=RAW_COLOR, label="all heralds")
        if post is not None:
            _bars(ax, post, 1e-6, color=POST_COLOR, label="dark ion only")
        ax.set_xlabel("time delay 393 nm - 854 nm (µs)")
        ax.set_ylabel(f"coincidences per {raw.bin_width / 1000:g} ns")
        ax.set_xlim(raw.t_min * 1e-6, raw.t_max * 1e-6)
        ax.legend(frameon=False, loc="upper right")
        fig.savefig(path, metadata=_META)
        plt.close(fig)


def plot_peak(hist: Histogram, fit: FitResult | None, path) -> None:
    """Fine-binned coincidence peak with the fitted correlation function, delay in ns."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        _bars(ax, hist, 1e-3, color=RAW_COLOR, alpha=0.8)
        if fit is not None:
            x = np.linspace(hist.t_min, hist.t_max, 1201)
            y = expected_shape(x, fit.amplitude, fit.tau_minus, fit.tau_plus, fit.offset)
            ax.plot(x * 1e-3, y, color=POST_COLOR, lw=1.2, label="fit")
            ax.legend(frameon=False, loc="upper right")
        ax.set_xlabel("time delay 393 nm - 854 nm (ns)")
        ax.set_ylabel(f"coincidences per {hist.bin_width / 1000:g} ns")
        ax.set_xlim(hist.t_min * 1e-3, hist.t_max * 1e-3)
        fig.savefig(path, metadata=_META)
        plt.close(fig)
