"""Scan-to-local-map matching and the iterated ESKF update.

The per-point functions (fit_neighborhood, p2d_residual, chi2_gate) define
the contracts; iterated_update runs the same math batched over a whole scan
for speed. Point-to-point ablation reuses the machinery with k = 1 and a
degenerate target covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ins, radar, so3
from .localmap import LocalMap

CHI2_95_DOF3 = 7.815


def _inv3_batch(A: np.ndarray) -> np.ndarray:
    """Adjugate inverse of a (m, 3, 3) stack; much faster than LU here."""
    a, b, c = A[:, 0, 0], A[:, 0, 1], A[:, 0, 2]
    d, e, f = A[:, 1, 0], A[:, 1, 1], A[:, 1, 2]
    g, h, i = A[:, 2, 0], A[:, 2, 1], A[:, 2, 2]
    c00 = e * i - f * h
    c01 = c * h - b * i
    c02 = b * f - c * e
    c10 = f * g - d * i
    c11 = a * i - c * g
    c12 = c * d - a * f
    c20 = d * h - e * g
    c21 = b * g - a * h
    c22 = a * e - b * d
    det = a * c00 + b * c10 + c * c20
    out = np.empty_like(A)
    out[:, 0, 0], out[:, 0, 1], out[:, 0, 2] = c00, c01, c02
    out[:, 1, 0], out[:, 1, 1], out[:, 1, 2] = c10, c11, c12
    out[:, 2, 0], out[:, 2, 1], out[:, 2, 2] = c20, c21, c22
    out /= det[:, None, None]
    return out


@dataclass
class MatchParams:
    k: int = 10
    assoc_radius: float = 5.0
    inflation: float = 2.0  # neighborhood covariance inflation
    epsilon: float = 1e-4  # m^2, covariance regularization
    chi2_threshold: float = CHI2_95_DOF3
    max_iterations: int = 5
    convergence_tol: float = 1e-4
    min_matches: int = 10
    joseph_form: bool = False
    exact_prior_jacobian: bool = False
    point_to_point: bool = False


@dataclass
class NeighborhoodGaussian:
    centroid: np.ndarray
    covariance: np.ndarray  # inflated + regularized
    count: int


def snr_filter(scan: radar.RadarScan, percentile: float = 5.0) -> radar.RadarScan:
    """Drop points in the lowest SNR percentile of this frame.

    Scans with fewer than 5 points pass through; ties at the threshold are
    kept, so uniform-SNR frames are untouched.
    """
    if len(scan) < 5:
        return scan
    threshold = np.percentile(scan.snr, percentile)
    return scan.subset(scan.snr >= threshold)


def fit_neighborhood(
    lmap: LocalMap, p_world: np.ndarray, prm: MatchParams
) -> NeighborhoodGaussian | None:
    """Gaussian over the k nearest map points, or None with no association.

    The covariance is the maximum-likelihood sample covariance (divide by N)
    scaled by the inflation factor, plus epsilon * I.
    """
    if len(lmap) == 0:
        return None
    dist, idx = lmap.knn(p_world, prm.k)
    valid = idx[0] >= 0
    if not valid.any() or dist[0, 0] > prm.assoc_radius:
        return None
    pts = lmap.points[idx[0][valid]]
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = (d.T @ d) / len(pts) * prm.inflation + prm.epsilon * np.eye(3)
    return NeighborhoodGaussian(centroid, cov, len(pts))


def p2d_residual(
    pt: radar.RadarPoint,
    x: ins.NavState,
    g: NeighborhoodGaussian,
    n: radar.RadarNoiseParams,
):
    """Point-to-distribution residual, 3x21 Jacobian and 3x3 covariance."""
    p_k = pt.cartesian
    Sigma_pk = radar.point_covariance(pt, n)
    return _p2d_terms(p_k, Sigma_pk, x, g.centroid, g.covariance)


def _p2d_terms(p_k, Sigma_pk, x: ins.NavState, centroid, Sigma_pc):
    R, Rr = x.rot, x.ext_rot
    lever = Rr @ p_k + x.ext_pos
    residual = R @ lever + x.pos - centroid
    H = np.zeros((3, ins.DIM))
    H[:, ins.TH] = -R @ so3.skew(lever)
    H[:, ins.POS] = np.eye(3)
    H[:, ins.ETH] = -R @ Rr @ so3.skew(p_k)
    H[:, ins.EPOS] = R
    J = R @ Rr
    R_block = J @ Sigma_pk @ J.T + Sigma_pc
    return residual, H, R_block


def chi2_gate(
    residual: np.ndarray,
    R_block: np.ndarray,
    H_block: np.ndarray,
    P: np.ndarray,
    threshold: float = CHI2_95_DOF3,
) -> bool:
    """Keep the match iff its Mahalanobis distance^2 passes the chi^2 test."""
    S = H_block @ P @ H_block.T + R_block
    md2 = float(residual @ np.linalg.solve(S, residual))
    return md2 <= threshold


def _associate_batch(
    x: ins.NavState,
    pts_radar: np.ndarray,
    pt_covs: np.ndarray,
    lmap: LocalMap,
    prm: MatchParams,
    P: np.ndarray,
):
    """Vectorized association + residual/Jacobian/covariance stacking.

    Same math as fit_neighborhood / p2d_residual / chi2_gate applied to every
    point; returns None when no candidate association exists.
    """
    m = pts_radar.shape[0]
    if m == 0 or len(lmap) == 0:
        return None
    R, Rr = x.rot, x.ext_rot
    lever = pts_radar @ Rr.T + x.ext_pos  # (m, 3)
    p_world = lever @ R.T + x.pos

    k = 1 if prm.point_to_point else prm.k
    dist, idx = lmap.knn(p_world, k)
    navail = min(k, len(lmap))
    valid = dist[:, 0] <= prm.assoc_radius
    if not valid.any():
        return None

    neigh = lmap.points[np.clip(idx[:, :navail], 0, None)]  # (m, kk, 3)
    centroid = neigh.mean(axis=1)
    if prm.point_to_point:
        Sigma_pc = np.broadcast_to(prm.epsilon * np.eye(3), (m, 3, 3))
    else:
        d = neigh - centroid[:, None, :]
        Sigma_pc = (
            np.einsum("mki,mkj->mij", d, d) / navail * prm.inflation
            + prm.epsilon * np.eye(3)
        )

    residual = p_world - centroid
    H = np.zeros((m, 3, ins.DIM))
    H[:, :, ins.TH] = -np.einsum("ij,mjk->mik", R, so3.skew_batch(lever))
    H[:, :, ins.POS] = np.eye(3)
    H[:, :, ins.ETH] = -np.einsum("ij,mjk->mik", R @ Rr, so3.skew_batch(pts_radar))
    H[:, :, ins.EPOS] = R
    J = R @ Rr
    R_blocks = J @ pt_covs @ J.T + Sigma_pc

    HP = H @ P
    S = HP @ H.transpose(0, 2, 1) + R_blocks
    sol = (_inv3_batch(S) @ residual[..., None])[..., 0]
    md2 = np.einsum("mi,mi->m", residual, sol)
    keep = valid & (md2 <= prm.chi2_threshold)
    if not keep.any():
        return None
    return residual[keep], H[keep], R_blocks[keep]


@dataclass
class UpdateInfo:
    matched: int = 0
    iterations: int = 0
    dx_norm: float = np.inf
    applied: bool = False


def iterated_update(
    x0: ins.NavState,
    P: np.ndarray,
    pts_radar: np.ndarray,
    pt_covs: np.ndarray,
    lmap: LocalMap,
    prm: MatchParams,
    active: np.ndarray | None = None,
):
    """Iterated ESKF update against the local map.

    Re-associates every point at each iterate, stacks the kept matches and
    applies the information-form gain with the prior-pullback term (its
    Jacobian taken as identity unless ``exact_prior_jacobian``); finishes
    with the covariance update using the last-iterate linearization.

    ``active`` selects the error-state indices allowed to move (frozen
    extrinsics are excluded by the caller). Returns (state, P, UpdateInfo).
    """
    if active is None:
        active = np.arange(ins.DIM)
    info = UpdateInfo()
    x = x0.copy()
    Pa = P[np.ix_(active, active)]
    Pa_inv = np.linalg.inv(Pa)
    last = None

    for it in range(prm.max_iterations):
        stacked = _associate_batch(x, pts_radar, pt_covs, lmap, prm, P)
        if stacked is None or stacked[0].shape[0] < prm.min_matches:
            if last is None:
                return x0, P, info
            break
        z, H, Rb = stacked
        m = z.shape[0]
        info.matched = m
        info.iterations = it + 1

        Ha = H[:, :, active]
        Rinv = _inv3_batch(Rb)
        RinvH = Rinv @ Ha
        HtRinvH = np.einsum("mji,mjk->ik", Ha, RinvH)
        HtRinvZ = np.einsum("mji,mjk,mk->i", Ha, Rinv, z)
        S = HtRinvH + Pa_inv

        b = ins.boxminus(x, x0)[active]
        if prm.exact_prior_jacobian:
            Jk = np.eye(len(active))
            th_pos = np.nonzero(np.isin(active, np.arange(*ins.TH.indices(ins.DIM))))[0]
            if th_pos.size == 3:
                Jk[np.ix_(th_pos, th_pos)] = so3.right_jacobian(b[th_pos])
            rhs = HtRinvZ + (S - HtRinvH) @ np.linalg.solve(Jk, b)
        else:
            rhs = HtRinvZ + Pa_inv @ b
        dxa = -np.linalg.solve(S, rhs)

        dx = np.zeros(ins.DIM)
        dx[active] = dxa
        x, _ = ins.inject_and_reset(x, P, dx)
        info.dx_norm = float(np.linalg.norm(dxa))
        last = (S, HtRinvH, Ha, Rinv, Rb)
        if info.dx_norm < prm.convergence_tol:
            break

    if last is None:
        return x0, P, info
    S, HtRinvH, Ha, Rinv, Rb = last
    KH = np.linalg.solve(S, HtRinvH)
    IKH = np.eye(len(active)) - KH
    if prm.joseph_form:
        m = Ha.shape[0]
        K = np.linalg.solve(S, np.einsum("mji,mjk->imk", Ha, Rinv).reshape(len(active), -1))
        K = K.reshape(len(active), m, 3)
        KRK = np.einsum("imj,mjk,lmk->il", K, Rb, K)
        Pa_new = IKH @ Pa @ IKH.T + KRK
    else:
        Pa_new = IKH @ Pa
    P_new = P.copy()
    P_new[np.ix_(active, active)] = Pa_new
    P_new = ins.symmetrize(P_new)
    info.applied = True
    return x, P_new, info


def augment_map(
    lmap: LocalMap, pts_radar: np.ndarray, x: ins.NavState
) -> tuple[int, bool]:
    """Insert the aligned scan into the map and trim around the vehicle.

    Returns (inserted count, whether a recenter/trim happened).
    """
    if pts_radar.shape[0]:
        p_world = (pts_radar @ x.ext_rot.T + x.ext_pos) @ x.rot.T + x.pos
        inserted = lmap.insert(p_world)
    else:
        inserted = 0
    recentred = lmap.maybe_recenter(x.pos)
    return inserted, recentred
