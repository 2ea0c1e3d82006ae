"""Figure rendering for sweep and landscape tables.

Everything draws through the Agg backend straight to files; nothing here
opens a window.  The figures are companions to the CSV output, not a
replacement for it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .gridworld import ExperimentResult, LandscapeResult

__all__ = ["plot_sweep", "plot_landscape"]


def plot_sweep(result: ExperimentResult, path) -> Path:
    """Mean test score vs dataset size, both filters, seed spread shaded."""
    rows = [r for r in result.rows if not r.error]
    sizes = sorted({r.n for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for field, label, color in (
        ("nll_untempered", "neutral exponents", "tab:blue"),
        ("nll_tempered", "tuned exponents", "tab:orange"),
    ):
        means, lows, highs = [], [], []
        for n in sizes:
            vals = np.array([getattr(r, field) for r in rows if r.n == n])
            vals = vals[np.isfinite(vals)]
            if len(vals) == 0:
                means.append(np.nan), lows.append(np.nan), highs.append(np.nan)
                continue
            means.append(vals.mean())
            lows.append(vals.min())
            highs.append(vals.max())
        ax.plot(sizes, means, marker="o", label=label, color=color)
        ax.fill_between(sizes, lows, highs, alpha=0.15, color=color)
    ax.set_xscale("log")
    ax.set_xlabel("trajectories in dataset")
    ax.set_ylabel("test NLL (nats per step)")
    ax.set_title(f"ablation={result.config.get('ablation_mode', 'none')}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_landscape(result: LandscapeResult, path) -> Path:
    """Heat map of log score over the exponent grid."""
    a_vals, b_vals = result.values
    with np.errstate(invalid="ignore"):
        z = np.log(result.nll)
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(b_vals, a_vals, z, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="log NLL")
    ax.set_xlabel(f"lambda_{result.axes[1]}")
    ax.set_ylabel(f"lambda_{result.axes[0]}")
    fixed_name, fixed_value = result.fixed
    ax.set_title(f"lambda_{fixed_name} fixed at {fixed_value:g}")
    if min(b_vals) > 0 and max(b_vals) / min(b_vals) > 10:
        ax.set_xscale("log")
    if min(a_vals) > 0 and max(a_vals) / min(a_vals) > 10:
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
