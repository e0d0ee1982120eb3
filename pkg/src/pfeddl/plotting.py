"""Figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_PNG_META = {"Software": None}


def savefig(fig, filename):
    fig.savefig(filename, dpi=100, bbox_inches="tight", pad_inches=0.1, metadata=_PNG_META)
    plt.close(fig)


def plot_objective(rounds, site_names, filename):
    """Per-site objective after each federated round (log scale)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if rounds:
        t = [0] + [r.round for r in rounds]
        values = np.array([rounds[0].objective_before] + [r.objective_after for r in rounds])
        for i, name in enumerate(site_names):
            ax.plot(t, values[:, i], label=name, lw=1.5)
        ax.set_yscale("log")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("federated round")
    ax.set_ylabel("site objective")
    savefig(fig, filename)


def plot_sweep(rows, param, filename):
    """Mean accuracy with a one-std band against the swept parameter."""
    rows = [r for r in rows if r.get("mean_accuracy") is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        x = np.array([float(r["value"]) for r in rows])
        m = np.array([r["mean_accuracy"] for r in rows])
        s = np.array([r["std_accuracy"] for r in rows])
        ax.errorbar(x, m, yerr=s, marker="o", capsize=3, lw=1.5)
    ax.set_xlabel(param)
    ax.set_ylabel("mean test accuracy")
    ax.set_ylim(0, 1.05)
    savefig(fig, filename)
