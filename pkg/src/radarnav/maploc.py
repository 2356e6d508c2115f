"""Keyframe accumulation and prior-map localization.

Keyframes project the static points of several consecutive scans into the
newest frame's radar coordinates using odometry-relative poses, transporting
each point's covariance with the relative rotation. After voxel-based
outlier removal the keyframe is matched against a fixed prior map with the
same point-to-distribution iterated update used for scan matching.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ins, matching
from .localmap import LocalMap


@dataclass
class KeyframeParams:
    frames: int = 10  # scans accumulated per keyframe
    voxel_size: float = 1.0
    dist_threshold: float = 1.0


@dataclass
class Keyframe:
    """Accumulated multi-frame point set in the newest frame's radar coords."""

    t: float
    points: np.ndarray  # (n, 3)
    covariances: np.ndarray  # (n, 3, 3)
    frame_ids: np.ndarray
    span: int

    def __post_init__(self):
        if self.points.shape[0] != self.covariances.shape[0]:
            raise ValueError("points and covariances length mismatch")


def _radar_pose(pose: tuple[np.ndarray, np.ndarray], ext_rot, ext_pos):
    """World pose of the radar frame given an IMU pose and extrinsics."""
    R, p = pose
    return R @ ext_rot, R @ ext_pos + p


def accumulate_keyframe(
    frames: list[tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]],
    ext_rot: np.ndarray,
    ext_pos: np.ndarray,
    anchor_t: float,
) -> Keyframe:
    """Merge (points, covariances, imu_pose) triples into the newest frame.

    The last list entry is the anchor; every earlier frame's points are
    mapped through the relative radar pose and their covariances rotated
    along (translation leaves them unchanged).
    """
    if not frames:
        raise ValueError("need at least one frame")
    Ra, pa = _radar_pose(frames[-1][2], ext_rot, ext_pos)
    out_pts, out_covs, out_ids = [], [], []
    for fid, (pts, covs, pose) in enumerate(frames):
        if pts.shape[0] == 0:
            continue
        Rf, pf = _radar_pose(pose, ext_rot, ext_pos)
        R_rel = Ra.T @ Rf
        t_rel = Ra.T @ (pf - pa)
        out_pts.append(pts @ R_rel.T + t_rel)
        out_covs.append(np.einsum("ij,mjk,lk->mil", R_rel, covs, R_rel))
        out_ids.append(np.full(pts.shape[0], fid))
    if not out_pts:
        return Keyframe(anchor_t, np.empty((0, 3)), np.empty((0, 3, 3)), np.empty(0, int), len(frames))
    return Keyframe(
        anchor_t,
        np.vstack(out_pts),
        np.concatenate(out_covs),
        np.concatenate(out_ids),
        len(frames),
    )


def voxel_outlier_mask(
    points: np.ndarray, voxel_size: float, dist_threshold: float
) -> np.ndarray:
    """Keep mask: a point survives iff another point within ``dist_threshold``
    exists in its own or one of the 26 adjacent voxels.

    For dist_threshold <= voxel_size this equals brute-force radius
    filtering exactly, while only examining nearby voxels.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    keys = np.floor(points / voxel_size).astype(np.int64)
    cells: dict[tuple[int, int, int], list[int]] = {}
    for i, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(i)

    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
    ]
    keep = np.zeros(n, dtype=bool)
    thr2 = dist_threshold * dist_threshold
    for key, members in cells.items():
        cand: list[int] = []
        for off in offsets:
            cand.extend(cells.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]), ()))
        cand = np.asarray(cand)
        cpts = points[cand]
        for i in members:
            d2 = ((cpts - points[i]) ** 2).sum(axis=1)
            d2[cand == i] = np.inf
            if d2.size and d2.min() <= thr2:
                keep[i] = True
    return keep


def voxel_outlier_removal(
    points: np.ndarray, voxel_size: float, dist_threshold: float
) -> np.ndarray:
    return np.asarray(points, dtype=float)[voxel_outlier_mask(points, voxel_size, dist_threshold)]


class PriorMap:
    """Immutable world-frame point set with k-NN queries."""

    def __init__(self, points: np.ndarray):
        self._map = LocalMap()
        self._map.insert(np.asarray(points, dtype=float))
        self._map._rebuild()

    def __len__(self) -> int:
        return len(self._map)

    @property
    def points(self) -> np.ndarray:
        return self._map.points

    def knn(self, queries, k):
        return self._map.knn(queries, k)

    def as_localmap(self) -> LocalMap:
        return self._map


def prior_map_update(
    x: ins.NavState,
    P: np.ndarray,
    kf: Keyframe,
    prior: PriorMap,
    prm: matching.MatchParams,
    active: np.ndarray | None = None,
):
    """Iterated update of the current state against the prior map.

    Identical math to the scan-to-local-map update, with keyframe points and
    their transported covariances in place of the single-scan noise model.
    """
    return matching.iterated_update(
        x, P, kf.points, kf.covariances, prior.as_localmap(), prm, active
    )
