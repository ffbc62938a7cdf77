"""Figures written next to the JSON reports.

Uses the non-interactive Agg backend and strips PNG metadata so identical
data give identical files.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def training_curve(history, path, ylabel="training risk"):
    """Risk against epoch; log scale when the risk stays positive."""
    epochs, risk = zip(*history) if history else ((), ())
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, risk, marker="o", ms=3)
        if risk and min(risk) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def iteration_traces(traces, path, ylabel, log=True):
    """One faint line per test sample plus the median across samples."""
    traces = np.asarray(traces, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        k = np.arange(traces.shape[-1])
        for row in traces:
            ax.plot(k, row, color="0.7", lw=0.6)
        ax.plot(k, np.median(traces, axis=0), color="C0", lw=1.8, label="median")
        if log and np.all(traces > 0):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _save(fig, path)


def bound_ratios(ratios, path):
    """Histogram of measured error over bound; the bound holds left of 1."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(np.asarray(ratios), bins=40, color="C0")
        ax.axvline(1.0, color="C3", ls="--")
        ax.set_xlabel("final error / bound")
        ax.set_ylabel("trials")
        return _save(fig, path)
