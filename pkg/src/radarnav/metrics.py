"""Trajectory evaluation: APE RMSE and loop-closure error."""
from __future__ import annotations

import numpy as np


class EvaluationError(ValueError):
    pass


def associate(t_est, t_gt, max_dt: float = 0.01):
    """Nearest-timestamp association; returns index pairs within max_dt."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    pos = np.searchsorted(t_gt, t_est)
    pairs = []
    for i, (te, j) in enumerate(zip(t_est, pos)):
        best, best_dt = -1, max_dt
        for jj in (j - 1, j):
            if 0 <= jj < len(t_gt) and abs(t_gt[jj] - te) <= best_dt:
                best, best_dt = jj, abs(t_gt[jj] - te)
        if best >= 0:
            pairs.append((i, best))
    return pairs


def ape_rmse(est, gt, align: str = "first", max_dt: float = 0.01):
    """APE RMSE between trajectories: (translation m, rotation deg).

    ``est``/``gt`` are (t, positions, rotations) triples as returned by
    :func:`radarnav.dataset.read_trajectory`. ``align='first'`` removes the
    first-pose offset (shared-initialization evaluation); ``'none'`` compares
    raw world-frame poses.
    """
    t_e, p_e, R_e = est
    t_g, p_g, R_g = gt
    pairs = associate(t_e, t_g, max_dt)
    if len(pairs) < 10:
        raise EvaluationError(f"only {len(pairs)} associated pose pairs (need >= 10)")
    ie = np.array([i for i, _ in pairs])
    ig = np.array([j for _, j in pairs])
    p_e, R_e = p_e[ie], R_e[ie]
    p_g, R_g = p_g[ig], R_g[ig]

    if align == "first":
        # rigid transform mapping the first estimated pose onto the first GT pose
        R_a = R_g[0] @ R_e[0].T
        t_a = p_g[0] - R_a @ p_e[0]
        p_e = p_e @ R_a.T + t_a
        R_e = np.einsum("ij,njk->nik", R_a, R_e)
    elif align != "none":
        raise ValueError(f"unknown alignment mode {align!r}")

    trans_rmse = float(np.sqrt(np.mean(np.sum((p_e - p_g) ** 2, axis=1))))
    dR = np.einsum("nji,njk->nik", R_g, R_e)  # R_g^T R_e
    cosang = np.clip((np.trace(dR, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    rot_rmse = float(np.rad2deg(np.sqrt(np.mean(np.arccos(cosang) ** 2))))
    return trans_rmse, rot_rmse


def loop_closure_error(est) -> float:
    """Distance between the first and last trajectory positions."""
    _, p, _ = est
    if p.shape[0] < 2:
        raise EvaluationError("trajectory needs at least 2 poses")
    return float(np.linalg.norm(p[-1] - p[0]))
