"""Report figures for a pipeline run (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import PipelineReport  # noqa: E402


def plot_iterations(report: PipelineReport, path, t_conv: float | None = None) -> None:
    recs = report.iterations
    it = [r.iteration for r in recs]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    axes[0].plot(it, [r.gamma for r in recs], "o-")
    axes[0].axhline(report.gamma_min, color="0.5", ls="--", lw=0.8, label="gamma floor")
    axes[0].set_ylabel("kernel size gamma [m]")
    axes[0].legend(frameon=False)
    axes[1].semilogy(it, [r.rms_before for r in recs], "o-", label="before")
    axes[1].semilogy(it, [r.rms_after for r in recs], "s-", label="after")
    axes[1].set_ylabel("residual RMS [m]")
    axes[1].legend(frameon=False)
    axes[2].semilogy(it, [max(r.max_update, 1e-12) for r in recs], "o-")
    if t_conv:
        axes[2].axhline(t_conv, color="C3", ls="--", lw=0.8, label="threshold")
        axes[2].legend(frameon=False)
    axes[2].set_ylabel("max pose update")
    for ax in axes:
        ax.set_xlabel("outer iteration")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_trajectories(path, initial, adjusted, truth=None) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for poses, style, label in ((initial, "x:", "initial"), (adjusted, "o-", "adjusted"),
                                (truth, "k.--", "truth")):
        if poses is None:
            continue
        xy = np.array([p.t[:2] for p in poses])
        ax.plot(xy[:, 0], xy[:, 1], style, ms=4, lw=1, label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
