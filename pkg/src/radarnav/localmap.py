"""Sliding local map: incremental k-NN structure over world-frame points.

Inserts are buffered and the underlying kd-tree is rebuilt lazily once the
buffer grows past a limit, so insertion stays amortized-cheap. Queries merge
tree hits with the pending buffer and re-rank candidates with exactly the
same distance formula a brute-force scan would use, with ties broken by the
smaller point index, so results are reproducible and match a linear scan.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# extra neighbors pulled from the tree so boundary ties are resolved by index
_TIE_SLACK = 8


class LocalMap:
    """Incremental point map with k-NN queries and spatial trimming.

    ``voxel_size`` enables deduplication on insert: at most one point is kept
    per occupied voxel, bounding map growth under repeated overlapping scans.
    """

    def __init__(
        self,
        radius: float = np.inf,
        hysteresis: float = 0.0,
        voxel_size: float | None = None,
        rebuild_limit: int = 8192,
    ):
        self.radius = float(radius)
        self.hysteresis = float(hysteresis)
        self.voxel_size = voxel_size
        self.rebuild_limit = int(rebuild_limit)
        self.center = np.zeros(3)
        self._pts = np.empty((0, 3))
        self._tree: cKDTree | None = None
        self._tree_n = 0
        self._pending_tree: cKDTree | None = None
        self._voxels: set[tuple[int, int, int]] = set()

    def __len__(self) -> int:
        return self._pts.shape[0]

    @property
    def points(self) -> np.ndarray:
        """(n, 3) view of the live points; do not mutate."""
        return self._pts

    def _voxel_keys(self, pts: np.ndarray) -> np.ndarray:
        return np.floor(pts / self.voxel_size).astype(np.int64)

    def insert(self, pts: np.ndarray) -> int:
        """Append world-frame points; returns the number actually stored."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.size == 0:
            return 0
        if self.voxel_size is not None:
            keys = self._voxel_keys(pts)
            keep = np.zeros(len(pts), dtype=bool)
            seen = self._voxels
            for i, key in enumerate(map(tuple, keys)):
                if key not in seen:
                    seen.add(key)
                    keep[i] = True
            pts = pts[keep]
            if pts.size == 0:
                return 0
        self._pts = np.vstack([self._pts, pts]) if len(self._pts) else pts.copy()
        if len(self._pts) - self._tree_n > self.rebuild_limit:
            self._rebuild()
        else:
            self._pending_tree = cKDTree(self._pts[self._tree_n :])
        return len(pts)

    def _rebuild(self):
        n = len(self._pts)
        self._tree = cKDTree(self._pts) if n else None
        self._tree_n = n
        self._pending_tree = None

    def knn(self, queries: np.ndarray, k: int):
        """k nearest neighbors for each query row.

        Returns (dist (q, k), idx (q, k)); missing neighbors (map smaller
        than k) are padded with inf / -1. Matches a brute-force scan with
        (distance, index) ordering.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        nq = queries.shape[0]
        n = len(self._pts)
        if n == 0:
            return np.full((nq, k), np.inf), np.full((nq, k), -1, dtype=np.int64)

        cand_idx = []
        if self._tree_n > 0:
            kt = min(k + _TIE_SLACK, self._tree_n)
            _, it = self._tree.query(queries, k=kt)
            cand_idx.append(np.asarray(it, dtype=np.int64).reshape(nq, -1))
        if n > self._tree_n:
            npend = n - self._tree_n
            kp = min(k + _TIE_SLACK, npend)
            _, ip = self._pending_tree.query(queries, k=kp)
            ip = np.asarray(ip, dtype=np.int64).reshape(nq, -1) + self._tree_n
            cand_idx.append(ip)
        idx = np.concatenate(cand_idx, axis=1)

        diff = self._pts[idx] - queries[:, None, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        # lexicographic (distance, index) via two stable sorts
        order = np.argsort(idx, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        order = np.argsort(dist, axis=1, kind="stable")
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        kk = min(k, idx.shape[1])
        out_d = np.full((nq, k), np.inf)
        out_i = np.full((nq, k), -1, dtype=np.int64)
        out_d[:, :kk] = dist[:, :kk]
        out_i[:, :kk] = idx[:, :kk]
        if n < k:
            out_d[:, n:] = np.inf
            out_i[:, n:] = -1
        return out_d, out_i

    def trim(self, center: np.ndarray):
        """Recenter and drop every point farther than ``radius``."""
        self.center = np.asarray(center, dtype=float).copy()
        if not len(self._pts) or not np.isfinite(self.radius):
            self._rebuild()
            return
        keep = np.linalg.norm(self._pts - self.center, axis=1) <= self.radius
        self._pts = self._pts[keep]
        if self.voxel_size is not None:
            self._voxels = set(map(tuple, self._voxel_keys(self._pts)))
        self._rebuild()

    def maybe_recenter(self, position: np.ndarray) -> bool:
        """Trim around ``position`` once it leaves the hysteresis band."""
        position = np.asarray(position, dtype=float)
        if np.linalg.norm(position - self.center) > self.hysteresis:
            self.trim(position)
            return True
        return False
