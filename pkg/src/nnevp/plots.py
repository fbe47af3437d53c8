"""Static SVG figures. Output is reproducible: no date metadata and a fixed
hash salt for element ids."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "nnevp"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_overlay(series, path, title="", boundary=None):
    """``series``: (label, strain, stress, kind) with kind 'truth' or 'model'."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for label, strain, stress, kind in series:
        if kind == "truth":
            ax.plot(100.0 * np.asarray(strain), stress, "o", ms=3, mfc="none", label=label)
        else:
            ax.plot(100.0 * np.asarray(strain), stress, "-", lw=1.5, label=label)
    if boundary is not None:
        ax.axvline(100.0 * boundary, color="0.5", ls="--", lw=1.0, label="training limit")
    ax.set_xlabel("strain [%]")
    ax.set_ylabel("stress [MPa]")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_loss(epochs, losses, path):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.semilogy(epochs, losses, "-", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("normalized loss")
    _save(fig, path)


def plot_hall_petch(grains, stress, slope, path, train_grains=None):
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.loglog(grains, stress, "o-", ms=4, label=f"network (slope {slope:.3f})")
    if train_grains is not None:
        for d in train_grains:
            ax.axvline(d, color="0.7", lw=0.8)
    ax.set_xlabel("grain size [um]")
    ax.set_ylabel("Hall-Petch stress [MPa]")
    ax.legend(fontsize=7)
    _save(fig, path)
