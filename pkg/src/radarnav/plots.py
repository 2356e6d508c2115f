"""Figure rendering for run/eval reports (written to files, Agg backend)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import associate


def save_trajectory_figure(outdir, est, gt=None) -> str:
    """Top-down XY plot of the estimated (and optionally true) trajectory."""
    os.makedirs(outdir, exist_ok=True)
    _, p_e, _ = est
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(p_e[:, 0], p_e[:, 1], "b-", lw=1.0, label="estimate")
    if gt is not None:
        _, p_g, _ = gt
        ax.plot(p_g[:, 0], p_g[:, 1], "k--", lw=0.8, label="ground truth")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    path = os.path.join(outdir, "trajectory_xy.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_error_figure(outdir, est, gt, max_dt: float = 0.01) -> str:
    """Per-axis and norm position error over time (first-pose aligned)."""
    os.makedirs(outdir, exist_ok=True)
    t_e, p_e, R_e = est
    t_g, p_g, R_g = gt
    pairs = associate(t_e, t_g, max_dt)
    ie = np.array([i for i, _ in pairs])
    ig = np.array([j for _, j in pairs])
    R_a = R_g[ig[0]] @ R_e[ie[0]].T
    t_a = p_g[ig[0]] - R_a @ p_e[ie[0]]
    err = (p_e[ie] @ R_a.T + t_a) - p_g[ig]
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, lbl in enumerate("xyz"):
        ax.plot(t_e[ie], err[:, k], lw=0.8, label=lbl)
    ax.plot(t_e[ie], np.linalg.norm(err, axis=1), "k-", lw=1.2, label="norm")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("position error [m]")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    path = os.path.join(outdir, "position_error.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
