"""Figure rendering for the CLI report path.

The CSV files remain the canonical output; these renderers draw the
same data so a run leaves something viewable next to the tables.  All
figures go through the Agg backend, no display is needed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _shade_state(ax, grid, theta_idx, state, **kwargs):
    """Shade the intervals on which the chain sits in ``state``."""
    t = np.asarray(grid.t)
    mask = np.asarray(theta_idx)[:-1] == state
    ax.fill_between(t[:-1], 0.0, 1.0, where=mask, step="post",
                    transform=ax.get_xaxis_transform(), **kwargs)


def render_paths(path, traj, theta_states):
    """Three stacked panels: prices, posterior, inventories."""
    t = np.asarray(traj.grid.t)
    theta_states = np.asarray(theta_states, dtype=float)
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)

    ax = axes[0]
    ax.plot(t, traj.s, lw=0.9, label="quoted price S")
    ax.plot(t, traj.f, lw=0.9, alpha=0.7, label="unaffected price F")
    ax.step(t, theta_states[traj.theta_idx], where="post", ls="--",
            color="black", lw=1.0, label="chain level")
    ax.set_ylabel("price")
    ax.legend(loc="best", fontsize=8)

    ax = axes[1]
    for m in range(traj.posterior.shape[1]):
        ax.plot(t, traj.posterior[:, m], lw=1.0, color=f"C{m}",
                label=f"posterior state {m + 1}")
        _shade_state(ax, traj.grid, traj.theta_idx, m,
                     color=f"C{m}", alpha=0.12, zorder=0)
    ax.set_ylim(-0.05, 1.05)
    ax.set_ylabel("posterior weight")
    ax.legend(loc="best", fontsize=8)

    ax = axes[2]
    if traj.inventory is not None:
        for j in range(traj.inventory.shape[0]):
            ax.plot(t, traj.inventory[j], lw=0.5, alpha=0.4,
                    color=f"C{int(traj.subpop_index[j])}")
    for k in range(traj.mean_inventory.shape[1]):
        ax.plot(t, traj.mean_inventory[:, k], lw=1.8, color=f"C{k}",
                label=f"class {k + 1} mean")
    ax.set_ylabel("inventory")
    ax.set_xlabel("time")
    ax.legend(loc="best", fontsize=8)

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_equilibrium(path, grid, nu_bar, q_bar, h2, g1):
    """Four panels with the class-level solution paths."""
    t = np.asarray(grid.t)
    k = nu_bar.shape[1]
    fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
    panels = [(q_bar, "mean inventory"), (nu_bar, "mean trading rate"),
              (h2, "within-class gain"), (g1, "drive aggregate")]
    for ax, (data, label) in zip(axes.ravel(), panels):
        for i in range(k):
            ax.plot(t, data[:, i], lw=1.2, label=f"class {i + 1}")
        ax.set_ylabel(label)
        ax.legend(loc="best", fontsize=8)
    for ax in axes[1]:
        ax.set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_nash_gap(path, report):
    """Gap against game size; log-log when the gaps allow it."""
    n = np.asarray(report.n_values, dtype=float)
    gaps = np.asarray(report.gaps, dtype=float)
    se = np.asarray(report.std_errors, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    positive = gaps > 0
    if positive.any():
        ax.errorbar(n[positive], gaps[positive], yerr=se[positive],
                    marker="o", lw=1.2, capsize=3)
        ax.set_xscale("log")
        ax.set_yscale("log")
    else:
        ax.errorbar(n, gaps, yerr=se, marker="o", lw=1.2, capsize=3)
        ax.set_xscale("log")
    ax.set_xlabel("number of agents")
    ax.set_ylabel("best-response gap")
    ax.set_title(report.method)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_filter_demo(path, traj, theta_states):
    """Two panels: unaffected price with chain level, posterior weights."""
    t = np.asarray(traj.grid.t)
    theta_states = np.asarray(theta_states, dtype=float)
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)

    ax = axes[0]
    ax.plot(t, traj.f, lw=0.9, label="unaffected price F")
    ax.step(t, theta_states[traj.theta_idx], where="post", ls="--",
            color="black", lw=1.0, label="chain level")
    ax.set_ylabel("price")
    ax.legend(loc="best", fontsize=8)

    ax = axes[1]
    for m in range(traj.posterior.shape[1]):
        ax.plot(t, traj.posterior[:, m], lw=1.0, color=f"C{m}",
                label=f"posterior state {m + 1}")
        _shade_state(ax, traj.grid, traj.theta_idx, m,
                     color=f"C{m}", alpha=0.12, zorder=0)
    ax.set_ylim(-0.05, 1.05)
    ax.set_ylabel("posterior weight")
    ax.set_xlabel("time")
    ax.legend(loc="best", fontsize=8)

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
