"""Radar measurement model.

Covers the per-point spherical noise model, Doppler residuals with their
Jacobians and observation variance, the 3-sigma Doppler gate, and RANSAC
ego-velocity estimation used at startup.

Doppler sign convention: for a static target, the measured Doppler equals
the projection of the sensor ego-velocity onto the point direction, i.e.
the residual below is zero. Importers must convert to this convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ins, so3


@dataclass
class RadarNoiseParams:
    sigma_range: float = 0.1  # m
    sigma_azimuth: float = np.deg2rad(0.5)  # rad
    sigma_elevation: float = np.deg2rad(0.5)  # rad
    sigma_doppler: float = 0.1  # m/s

    def __post_init__(self):
        for name in ("sigma_range", "sigma_azimuth", "sigma_elevation", "sigma_doppler"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class RadarPoint:
    """One detection in the radar frame: spherical coordinates + Doppler + SNR."""

    range: float
    azimuth: float
    elevation: float
    doppler: float
    snr: float

    def __post_init__(self):
        if not self.range > 0.0:
            raise ValueError("range must be > 0")
        if not np.isfinite(self.snr):
            raise ValueError("snr must be finite")

    @classmethod
    def from_cartesian(cls, xyz, doppler: float, snr: float) -> "RadarPoint":
        xyz = np.asarray(xyz, dtype=float)
        r = float(np.linalg.norm(xyz))
        az = float(np.arctan2(xyz[1], xyz[0]))
        el = float(np.arcsin(np.clip(xyz[2] / r, -1.0, 1.0)))
        return cls(r, az, el, doppler, snr)

    @property
    def cartesian(self) -> np.ndarray:
        return spherical_to_cartesian(self.range, self.azimuth, self.elevation)

    @property
    def direction(self) -> np.ndarray:
        return self.cartesian / self.range


@dataclass
class RadarScan:
    """A timestamped frame of detections, kept as parallel arrays.

    ``outlier_labels`` is simulator ground truth (True = injected
    dynamic/noise point); real datasets leave it None.
    """

    t: float
    range: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    doppler: np.ndarray
    snr: np.ndarray
    outlier_labels: np.ndarray | None = None

    def __post_init__(self):
        for name in ("range", "azimuth", "elevation", "doppler", "snr"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.outlier_labels is not None:
            self.outlier_labels = np.asarray(self.outlier_labels, dtype=bool)

    def __len__(self) -> int:
        return self.range.shape[0]

    @classmethod
    def from_points(cls, t: float, points: list[RadarPoint], labels=None) -> "RadarScan":
        return cls(
            t,
            np.array([p.range for p in points]),
            np.array([p.azimuth for p in points]),
            np.array([p.elevation for p in points]),
            np.array([p.doppler for p in points]),
            np.array([p.snr for p in points]),
            labels,
        )

    @property
    def points(self) -> list[RadarPoint]:
        return [
            RadarPoint(r, az, el, d, s)
            for r, az, el, d, s in zip(
                self.range, self.azimuth, self.elevation, self.doppler, self.snr
            )
        ]

    def cartesian(self) -> np.ndarray:
        """(n, 3) point positions in the radar frame."""
        return spherical_to_cartesian(self.range, self.azimuth, self.elevation)

    def directions(self) -> np.ndarray:
        return self.cartesian() / self.range[:, None]

    def subset(self, mask: np.ndarray) -> "RadarScan":
        labels = None if self.outlier_labels is None else self.outlier_labels[mask]
        return RadarScan(
            self.t,
            self.range[mask],
            self.azimuth[mask],
            self.elevation[mask],
            self.doppler[mask],
            self.snr[mask],
            labels,
        )


def spherical_to_cartesian(r, azimuth, elevation) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    xyz = np.stack(
        [
            r * np.cos(el) * np.cos(az),
            r * np.cos(el) * np.sin(az),
            r * np.sin(el),
        ],
        axis=-1,
    )
    return xyz


def spherical_jacobian(r, azimuth, elevation) -> np.ndarray:
    """Jacobian of the spherical -> Cartesian map, columns (dr, daz, del)."""
    r = np.asarray(r, dtype=float)
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ca, sa = np.cos(az), np.sin(az)
    ce, se = np.cos(el), np.sin(el)
    J = np.empty(np.shape(r) + (3, 3))
    J[..., 0, 0] = ce * ca
    J[..., 1, 0] = ce * sa
    J[..., 2, 0] = se
    J[..., 0, 1] = -r * ce * sa
    J[..., 1, 1] = r * ce * ca
    J[..., 2, 1] = 0.0
    J[..., 0, 2] = -r * se * ca
    J[..., 1, 2] = -r * se * sa
    J[..., 2, 2] = r * ce
    return J


def point_covariance(pt: RadarPoint, n: RadarNoiseParams) -> np.ndarray:
    """Cartesian noise covariance of one detection, radar frame."""
    return point_covariances(
        np.atleast_1d(pt.range), np.atleast_1d(pt.azimuth), np.atleast_1d(pt.elevation), n
    )[0]


def point_covariances(r, azimuth, elevation, n: RadarNoiseParams) -> np.ndarray:
    """Batched point covariances: (m, 3, 3)."""
    J = spherical_jacobian(r, azimuth, elevation)
    S = np.array([n.sigma_range**2, n.sigma_azimuth**2, n.sigma_elevation**2])
    return np.einsum("...ij,j,...kj->...ik", J, S, J)


def doppler_batch(
    scan: RadarScan, x: ins.NavState, omega_hat: np.ndarray, n: RadarNoiseParams
):
    """Residuals, H rows and variances for every point of a scan.

    Returns (residual (m,), H (m, 21), variance (m,)). The Jacobian blocks
    are exact derivatives of the residual under the package's
    right-multiplicative error convention (validated by finite differences),
    including the extrinsic blocks; freezing extrinsics is done by masking
    columns at update time.
    """
    d = scan.directions()  # (m, 3)
    m = d.shape[0]
    Rr = x.ext_rot
    vb = x.rot.T @ x.vel  # body-frame velocity
    K0 = vb + np.cross(omega_hat, x.ext_pos)
    K = Rr.T @ K0  # radar-frame sensor velocity
    residual = d @ K - scan.doppler

    H = np.zeros((m, ins.DIM))
    dRr = d @ Rr.T  # (m, 3), rows d^T Rr^T
    H[:, ins.TH] = dRr @ so3.skew(vb)
    H[:, ins.VEL] = dRr @ x.rot.T
    H[:, ins.BG] = dRr @ so3.skew(x.ext_pos)
    H[:, ins.ETH] = d @ so3.skew(Rr.T @ K0)
    H[:, ins.EPOS] = dRr @ so3.skew(omega_hat)

    # Direction noise on the sphere tangent plane, projected through K.
    N = tangent_basis_batch(d)  # (m, 3, 2)
    A = np.einsum("mij,mjc->mic", so3.skew_batch(d), N)
    JO = np.einsum("j,mjc->mc", K, A)
    sigma_dir = np.array([n.sigma_azimuth**2, n.sigma_elevation**2])
    var = (JO**2 * sigma_dir).sum(axis=1) + n.sigma_doppler**2
    return residual, H, var


def tangent_basis_batch(omega: np.ndarray) -> np.ndarray:
    """Vectorized :func:`radarnav.so3.tangent_basis` for (m, 3) unit rows."""
    omega = np.asarray(omega, dtype=float)
    m = omega.shape[0]
    k = np.argmin(np.abs(omega), axis=1)
    w = omega.copy()
    w[np.arange(m), k] -= 1.0
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    H = np.eye(3)[None] - 2.0 * w[:, :, None] * w[:, None, :]
    # columns of H other than k form the basis
    cols = np.array([[1, 2], [0, 2], [0, 1]])[k]  # (m, 2)
    return H[np.arange(m)[:, None, None], np.arange(3)[None, :, None], cols[:, None, :]]


def doppler_residual(
    pt: RadarPoint, x: ins.NavState, omega_hat: np.ndarray, n: RadarNoiseParams
):
    """Residual, 1x21 Jacobian row and observation variance for one point."""
    scan = RadarScan.from_points(0.0, [pt])
    res, H, var = doppler_batch(scan, x, omega_hat, n)
    return float(res[0]), H[0], float(var[0])


@dataclass
class DopplerGateResult:
    inlier_mask: np.ndarray
    residual: np.ndarray
    H: np.ndarray
    variance: np.ndarray

    @property
    def skip_update(self) -> bool:
        return not bool(self.inlier_mask.any())


def gate_doppler(
    scan: RadarScan,
    x: ins.NavState,
    n: RadarNoiseParams,
    omega_hat: np.ndarray,
    P: np.ndarray | None = None,
    gate_sigma: float = 3.0,
) -> DopplerGateResult:
    """Classify points against the gate |r|^2 <= k^2 (var + H P H^T).

    With P None only the sensor variance is used. An all-outlier result sets
    ``skip_update`` so the caller bypasses the Doppler update.
    """
    residual, H, var = doppler_batch(scan, x, omega_hat, n)
    total = var.copy()
    if P is not None:
        total += np.einsum("mi,ij,mj->m", H, P, H)
    inliers = residual**2 <= gate_sigma**2 * total
    return DopplerGateResult(inliers, residual, H, var)


@dataclass
class EgoVelocityResult:
    velocity: np.ndarray  # radar frame, m/s
    inlier_mask: np.ndarray


def ransac_ego_velocity(
    scan: RadarScan,
    n: RadarNoiseParams,
    threshold: float = 0.2,
    min_iters: int = 17,
    max_iters: int = 200,
    confidence: float = 0.99,
    rng: np.random.Generator | None = None,
) -> EgoVelocityResult | None:
    """Ego velocity from radial Doppler: solve d_k . v = v_dk over a RANSAC
    consensus with 3-point minimal sets. Returns None on degenerate geometry.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    d = scan.directions()
    vd = scan.doppler
    m = d.shape[0]
    if m < 3 or np.linalg.matrix_rank(d, tol=1e-6) < 3:
        return None

    best_mask = None
    best_count = -1
    iters = max(int(min_iters), 1)
    it = 0
    while it < iters:
        idx = rng.choice(m, size=3, replace=False)
        A = d[idx]
        if abs(np.linalg.det(A)) < 1e-9:
            it += 1
            continue
        v = np.linalg.solve(A, vd[idx])
        mask = np.abs(d @ v - vd) <= threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            ratio = max(count / m, 1e-9)
            if ratio < 1.0:
                need = int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - ratio**3)))
                iters = min(max_iters, max(min_iters, need))
        it += 1

    if best_mask is None or best_count < 3:
        return None
    A = d[best_mask]
    if np.linalg.matrix_rank(A, tol=1e-6) < 3:
        return None
    v, *_ = np.linalg.lstsq(A, vd[best_mask], rcond=None)
    # refresh the consensus once with the least-squares estimate
    mask = np.abs(d @ v - vd) <= threshold
    if mask.sum() >= 3 and np.linalg.matrix_rank(d[mask], tol=1e-6) == 3:
        v, *_ = np.linalg.lstsq(d[mask], vd[mask], rcond=None)
    else:
        mask = best_mask
    return EgoVelocityResult(v, mask)
