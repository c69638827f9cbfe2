"""Matplotlib figures for tracking and evaluation reports.

Every function draws one figure, writes it to ``path`` and closes it; the
non-interactive Agg backend is used so reports render headless.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .labels import root  # noqa: E402


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return str(path)


def plot_cardinality(frames, mean, std, path, truth=None) -> str:
    frames, mean, std = np.asarray(frames), np.asarray(mean, float), np.asarray(std, float)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(frames, mean, color="C0", label="estimated mean")
    ax.fill_between(frames, mean - std, mean + std, color="C0", alpha=0.25, linewidth=0)
    if truth is not None:
        ax.step(frames, truth, where="mid", color="k", linewidth=1, label="true")
    ax.set_xlabel("frame")
    ax.set_ylabel("number of cells")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_background(frames, clutter, detection, path, true_clutter=None, true_pd=None) -> str:
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    a1.plot(frames, clutter, color="C1")
    if true_clutter is not None:
        a1.axhline(true_clutter, color="k", linestyle="--", linewidth=1)
    a1.set_ylabel("clutter rate")
    a2.plot(frames, detection, color="C2")
    if true_pd is not None:
        a2.axhline(true_pd, color="k", linestyle="--", linewidth=1)
    a2.set_ylabel("mean P_D")
    a2.set_xlabel("frame")
    return _save(fig, path)


def plot_divisions(frames, division_mean, path, truth=None) -> str:
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.bar(frames, division_mean, color="C3", width=0.8, label="expected divisions")
    if truth is not None:
        ax.plot(frames, truth, "kx", label="true divisions")
    ax.set_xlabel("frame")
    ax.set_ylabel("divisions")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_tracks(ts, path, title=None) -> str:
    """Trajectories in the image plane, coloured by lineage tree."""
    fig, ax = plt.subplots(figsize=(6, 6))
    roots = sorted({root(lab) for lab in ts.tracks})
    colour = {r: f"C{i % 10}" for i, r in enumerate(roots)}
    for lab, pts in sorted(ts.tracks.items()):
        xy = np.array(list(pts.values())).reshape(-1, 2)
        ax.plot(xy[:, 0], xy[:, 1], color=colour[root(lab)], linewidth=1)
        ax.plot(xy[-1, 0], xy[-1, 1], ".", color=colour[root(lab)], markersize=3)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_errors(frames, series: dict, path, ylabel="error") -> str:
    """One line per named per-frame error series (e.g. OSPA and OSPA²)."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, values in series.items():
        ax.plot(frames, values, label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)
