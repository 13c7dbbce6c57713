"""Figure rendering for the report path: PNG files next to the CSV output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .lti import TimeSeries


def _savefig(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_frequency(series: TimeSeries, path: str) -> str | None:
    chans = [c for c in series.names() if c.startswith("f_")]
    if not chans:
        return None
    fig, ax = plt.subplots(figsize=(7, 4))
    for c in chans:
        if c in ("f_des",):
            continue
        ax.plot(series.t, series[c], lw=1.0, label=c)
    if "f_des" in series.channels:
        ax.plot(series.t, series["f_des"], "k--", lw=1.4, label="f_des")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency deviation [pu]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    return _savefig(fig, path)


def plot_powers(series: TimeSeries, path: str) -> str | None:
    chans = [c for c in series.names() if c.startswith(("p_", "pphys_", "q_", "qphys_"))]
    if not chans:
        return None
    fig, ax = plt.subplots(figsize=(7, 4))
    for c in chans:
        ax.plot(series.t, series[c], lw=1.0, label=c)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("power deviation [pu]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    return _savefig(fig, path)


def plot_bode(table: dict[str, np.ndarray], path: str) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    omega = table["omega"]
    for name, vals in table.items():
        if name == "omega":
            continue
        ax.loglog(omega, np.maximum(vals, 1e-12), lw=1.2, label=name)
    ax.set_xlabel("frequency [rad/s]")
    ax.set_ylabel("participation factor magnitude")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8, ncol=2)
    return _savefig(fig, path)


def plot_montecarlo(
    t: np.ndarray,
    baseline: dict[str, np.ndarray],
    samples: list[dict[str, np.ndarray]],
    path: str,
) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    for res in samples:
        for name, trace in res.items():
            if name.startswith("f_"):
                ax.plot(t, trace, color="0.7", lw=0.6, zorder=1)
    for name, trace in baseline.items():
        ax.plot(t, trace, lw=1.5, zorder=2, label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("coupling-bus frequency deviation [pu]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _savefig(fig, path)


def write_text(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path
