"""Render simulation report figures to files next to the CSV output.

Four panels mirror the usual way these runs are inspected: planar
trajectories with target regions and estimate traces, disagreement
components against their funnels, estimation error norms against their
reconstructed bounds, and task robustness against the funnel corridor
with the satisfaction window shaded.

The focus pair/task defaults to the first task that actually uses
estimates, which is where the interesting coupling lives.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .stl import NormBallAbsolute


def _focus_task(runtime):
    for task in runtime.tasks:
        if task.estimated_ids:
            return task
    return runtime.tasks[0] if runtime.tasks else None


def render_figures(result, outdir) -> list:
    """Write the report PNGs; returns the list of created paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory
    runtime = result.runtime
    created = []

    created.append(_plot_trajectories(traj, runtime, outdir / "trajectories.png"))
    focus = _focus_task(runtime)
    if focus is not None and focus.estimated_ids:
        created.append(_plot_disagreements(traj, runtime, focus, outdir / "disagreements.png"))
        created.append(_plot_error_norms(traj, runtime, focus, outdir / "estimation_errors.png"))
    if focus is not None:
        created.append(_plot_robustness(traj, runtime, focus, outdir / "robustness.png"))
    return created


def _plot_trajectories(traj, runtime, path):
    fig, ax = plt.subplots(figsize=(7, 6))
    cmap = plt.get_cmap("tab20")
    for idx, agent in enumerate(runtime.agents):
        px = traj.column(f"x{agent.id}_{agent.dynamics.pos_idx[0]}")
        py = traj.column(f"x{agent.id}_{agent.dynamics.pos_idx[1]}")
        color = cmap(idx % 20)
        ax.plot(px, py, color=color, lw=0.8)
        ax.plot(px[0], py[0], "x", color=color, ms=7)
        ax.plot(px[-1], py[-1], "o", color=color, ms=5)
        ax.annotate(str(agent.id), (px[-1], py[-1]), fontsize=8)
    for task in runtime.tasks:
        for lit in task.conjuncts:
            pred = lit.predicate
            if isinstance(pred, NormBallAbsolute) and not lit.negated:
                circle = plt.Circle(
                    pred.center, np.sqrt(pred.radius_sq),
                    color="red", fill=False, ls="--", lw=1.0,
                )
                ax.add_patch(circle)
    focus = _focus_task(runtime)
    if focus is not None:
        for p in sorted(focus.estimated_ids):
            bank = runtime.banks[runtime.bank_of[p]]
            pos_idx = runtime.agents[runtime.index_of[p]].dynamics.pos_idx
            ex = traj.column(f"xhat{p}_{focus.owner}_{pos_idx[0]}")
            ey = traj.column(f"xhat{p}_{focus.owner}_{pos_idx[1]}")
            ax.plot(ex, ey, color="k", lw=0.6, ls=":",
                    label=f"agent {focus.owner} estimate of {p}")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("State and estimated trajectories")
    ax.axis("equal")
    if focus is not None and focus.estimated_ids:
        ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _plot_disagreements(traj, runtime, task, path):
    pairs = sorted(task.estimated_ids)
    fig, axes = plt.subplots(len(pairs), 1, figsize=(7, 2.6 * len(pairs)),
                             squeeze=False)
    t = traj.times
    for ax_row, p in zip(axes[:, 0], pairs):
        bank = runtime.banks[runtime.bank_of[p]]
        rho = traj.column(f"rho{p}_{task.owner}")
        for c in range(bank.dim):
            ax_row.plot(t, traj.column(f"xi{p}_{task.owner}_{c}"), lw=0.8,
                        label=f"component {c}")
        ax_row.plot(t, rho, "k--", lw=1.0, label="funnel")
        ax_row.plot(t, -rho, "k--", lw=1.0)
        ax_row.set_ylabel(f"disagreement {task.owner}->{p}")
        ax_row.legend(fontsize=7, ncol=2)
    axes[-1, 0].set_xlabel("t [s]")
    fig.suptitle(f"Disagreements of agent {task.owner}'s estimates")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _plot_error_norms(traj, runtime, task, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    t = traj.times
    for p in sorted(task.estimated_ids):
        pos_idx = runtime.agents[runtime.index_of[p]].dynamics.pos_idx
        err = np.stack([
            traj.column(f"xerr{p}_{task.owner}_{c}") for c in pos_idx
        ])
        norm = np.sqrt(np.sum(err * err, axis=0))
        ax.plot(t, norm, lw=1.0, label=f"||error {task.owner}->{p}||")
        bound = np.sqrt(len(pos_idx)) * traj.column(f"delta{p}_{task.owner}")
        ax.plot(t, bound, ls="--", lw=1.0, label=f"bound {task.owner}->{p}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("estimation error norm [m]")
    ax.set_title(f"Estimation errors of agent {task.owner}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _plot_robustness(traj, runtime, task, path):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    t = traj.times
    rho_hat = traj.column(f"rhohat_{task.name}")
    gamma_bar = traj.column(f"Gamma_{task.name}")
    ax1.plot(t, rho_hat, lw=1.2, label="estimated robustness (smooth)")
    ax1.plot(t, np.full_like(t, task.rho_max), "k-", lw=0.8, label="reference")
    ax1.plot(t, task.rho_max - gamma_bar, "k--", lw=0.8, label="funnel lower bound")
    ax1.set_ylabel("robustness")
    ax1.legend(fontsize=8)
    ax1.set_title(f"Task {task.name}: funnel corridor and true robustness")
    for m in range(len(task.conjuncts)):
        ax2.plot(t, traj.column(f"rhotruec_{task.name}_{m}"), lw=1.0,
                 label=f"conjunct {m} (true)")
    ax2.axhline(0.0, color="k", lw=0.8)
    ax2.axvspan(task.window.lo, task.window.hi, color="green", alpha=0.15,
                label="satisfaction window")
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("true robustness")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
