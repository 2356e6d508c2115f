"""Strapdown inertial core: nominal propagation, error-state covariance,
ESKF injection/reset, and static initialization.

Error-state ordering (dimension 21), used by every Jacobian in the package:

    [d_theta, d_p, d_v, d_bg, d_ba, d_theta_ext, d_t_ext]

Rotation errors are right-multiplicative local perturbations,
R = R_hat @ Exp(d_theta).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

TH = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
ETH = slice(15, 18)
EPOS = slice(18, 21)
DIM = 21

# Sensor-range guard for specific force, m/s^2.
ACCEL_RANGE = 320.0


class NotStaticError(RuntimeError):
    """Raised when initialization data violates the static assumption."""


@dataclass
class ImuSample:
    """One IMU reading: specific force (m/s^2) and angular rate (rad/s)."""

    t: float
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.gyro))):
            raise ValueError("non-finite IMU sample")
        if np.linalg.norm(self.accel) >= ACCEL_RANGE:
            raise ValueError("specific force beyond sensor range")


@dataclass
class ImuNoiseParams:
    """Continuous-time IMU noise densities and the world gravity vector."""

    gyro_noise: float = 2e-3  # rad/s/sqrt(Hz)
    accel_noise: float = 2e-2  # m/s^2/sqrt(Hz)
    gyro_bias_walk: float = 1e-5  # rad/s^2/sqrt(Hz)
    accel_bias_walk: float = 1e-4  # m/s^3/sqrt(Hz)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        for name in ("gyro_noise", "accel_noise", "gyro_bias_walk", "accel_bias_walk"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class InitStds:
    """1-sigma values for the initial error covariance."""

    att: float = 0.02
    pos: float = 0.01
    vel: float = 0.1
    gyro_bias: float = 0.01
    accel_bias: float = 0.1
    ext_att: float = 1e-8
    ext_pos: float = 1e-8


@dataclass
class NavState:
    """Full nominal state: IMU pose/velocity, biases, radar extrinsics."""

    rot: np.ndarray  # attitude, body -> world
    pos: np.ndarray
    vel: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    ext_rot: np.ndarray  # radar -> body
    ext_pos: np.ndarray  # radar origin in body frame
    t: float = 0.0

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=float)
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        self.bg = np.asarray(self.bg, dtype=float)
        self.ba = np.asarray(self.ba, dtype=float)
        self.ext_rot = np.asarray(self.ext_rot, dtype=float)
        self.ext_pos = np.asarray(self.ext_pos, dtype=float)

    @classmethod
    def identity(cls, t: float = 0.0) -> "NavState":
        z = np.zeros(3)
        return cls(np.eye(3), z.copy(), z.copy(), z.copy(), z.copy(), np.eye(3), z.copy(), t)

    def copy(self) -> "NavState":
        return NavState(
            self.rot.copy(),
            self.pos.copy(),
            self.vel.copy(),
            self.bg.copy(),
            self.ba.copy(),
            self.ext_rot.copy(),
            self.ext_pos.copy(),
            self.t,
        )


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def psd_floor(P: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Clip eigenvalues below ``floor`` and re-symmetrize."""
    P = symmetrize(P)
    w, V = np.linalg.eigh(P)
    if w.min() >= floor:
        return P
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T)


def initial_covariance(stds: InitStds) -> np.ndarray:
    P = np.zeros((DIM, DIM))
    P[TH, TH] = np.eye(3) * stds.att**2
    P[POS, POS] = np.eye(3) * stds.pos**2
    P[VEL, VEL] = np.eye(3) * stds.vel**2
    P[BG, BG] = np.eye(3) * stds.gyro_bias**2
    P[BA, BA] = np.eye(3) * stds.accel_bias**2
    P[ETH, ETH] = np.eye(3) * stds.ext_att**2
    P[EPOS, EPOS] = np.eye(3) * stds.ext_pos**2
    return P


def propagate_nominal(x: NavState, u: ImuSample, dt: float, q: ImuNoiseParams) -> NavState:
    """One strapdown step with bias-corrected rates; biases/extrinsics held."""
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must be in (0, 0.1] s, got {dt}")
    w_hat = u.gyro - x.bg
    a_hat = u.accel - x.ba
    a_world = x.rot @ a_hat
    out = x.copy()
    out.rot = so3.renormalize(x.rot @ so3.exp_so3(w_hat * dt))
    out.pos = x.pos + x.vel * dt + 0.5 * (a_world + q.gravity) * dt * dt
    out.vel = x.vel + (a_world + q.gravity) * dt
    out.t = x.t + dt
    return out


def propagation_jacobians(x: NavState, u: ImuSample, dt: float):
    """Discrete error-state transition F (21x21) and noise gain Fw (21x12).

    Noise ordering: [n_gyro, n_accel, n_bg_walk, n_ba_walk], each assumed
    white with the continuous densities of ImuNoiseParams; the discrete
    process noise is Q_d = diag(sigma^2) * dt applied through Fw.
    """
    w_hat = u.gyro - x.bg
    a_hat = u.accel - x.ba
    delta = so3.exp_so3(w_hat * dt)
    Jr = so3.right_jacobian(w_hat * dt)
    Ra = x.rot @ so3.skew(a_hat)

    F = np.eye(DIM)
    F[TH, TH] = delta.T
    F[TH, BG] = -Jr * dt
    F[POS, TH] = -0.5 * Ra * dt * dt
    F[POS, VEL] = np.eye(3) * dt
    F[POS, BA] = -0.5 * x.rot * dt * dt
    F[VEL, TH] = -Ra * dt
    F[VEL, BA] = -x.rot * dt

    Fw = np.zeros((DIM, 12))
    Fw[TH, 0:3] = -Jr
    Fw[POS, 3:6] = -0.5 * x.rot * dt
    Fw[VEL, 3:6] = -x.rot
    Fw[BG, 6:9] = np.eye(3)
    Fw[BA, 9:12] = np.eye(3)
    return F, Fw


def propagate_covariance(
    P: np.ndarray, x: NavState, u: ImuSample, dt: float, q: ImuNoiseParams
) -> np.ndarray:
    F, Fw = propagation_jacobians(x, u, dt)
    Qd = np.diag(
        np.r_[
            np.full(3, q.gyro_noise**2),
            np.full(3, q.accel_noise**2),
            np.full(3, q.gyro_bias_walk**2),
            np.full(3, q.accel_bias_walk**2),
        ]
        * dt
    )
    return symmetrize(F @ P @ F.T + Fw @ Qd @ Fw.T)


def inject_and_reset(x: NavState, P: np.ndarray, dx: np.ndarray):
    """Compose an error vector into the nominal state; symmetrize P."""
    dx = np.asarray(dx, dtype=float)
    if not np.all(np.isfinite(dx)):
        raise ValueError("non-finite error vector")
    out = x.copy()
    out.rot = so3.renormalize(x.rot @ so3.exp_so3(dx[TH]))
    out.pos = x.pos + dx[POS]
    out.vel = x.vel + dx[VEL]
    out.bg = x.bg + dx[BG]
    out.ba = x.ba + dx[BA]
    out.ext_rot = so3.renormalize(x.ext_rot @ so3.exp_so3(dx[ETH]))
    out.ext_pos = x.ext_pos + dx[EPOS]
    return out, symmetrize(P)


def boxminus(xa: NavState, xb: NavState) -> np.ndarray:
    """Error vector dx with xa = xb (+) dx; inverse of inject_and_reset."""
    dx = np.zeros(DIM)
    dx[TH] = so3.log_so3(xb.rot.T @ xa.rot)
    dx[POS] = xa.pos - xb.pos
    dx[VEL] = xa.vel - xb.vel
    dx[BG] = xa.bg - xb.bg
    dx[BA] = xa.ba - xb.ba
    dx[ETH] = so3.log_so3(xb.ext_rot.T @ xa.ext_rot)
    dx[EPOS] = xa.ext_pos - xb.ext_pos
    return dx


def gravity_alignment(accel_mean: np.ndarray, gravity: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the average specific force onto -gravity."""
    u = accel_mean / np.linalg.norm(accel_mean)
    w = -gravity / np.linalg.norm(gravity)
    axis = np.cross(u, w)
    s = np.linalg.norm(axis)
    c = float(u @ w)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: rotate by pi about any horizontal axis
        return so3.exp_so3(np.pi * so3.tangent_basis(u)[:, 0])
    return so3.exp_so3(axis / s * np.arctan2(s, c))


def initialize(
    static_imu: list,
    q: ImuNoiseParams,
    stds: InitStds,
    ext_rot: np.ndarray,
    ext_pos: np.ndarray,
    first_scan_velocity: np.ndarray | None = None,
    external_pose: tuple[float, np.ndarray] | None = None,
    min_samples: int = 50,
):
    """Static alignment: roll/pitch from averaged specific force.

    ``external_pose`` is an optional (yaw_rad, position) pair; without it the
    initial yaw and position are zero. ``first_scan_velocity`` is an ego
    velocity in the radar frame, rotated into the world frame.
    """
    if len(static_imu) < min_samples:
        raise NotStaticError(f"need >= {min_samples} static samples, got {len(static_imu)}")
    a_mean = np.mean([s.accel for s in static_imu], axis=0)
    g_norm = np.linalg.norm(q.gravity)
    if abs(np.linalg.norm(a_mean) - g_norm) > 0.2 * g_norm:
        raise NotStaticError(
            f"average specific force {np.linalg.norm(a_mean):.3f} m/s^2 "
            f"inconsistent with gravity {g_norm:.3f} m/s^2"
        )
    rot = gravity_alignment(a_mean, q.gravity)
    pos = np.zeros(3)
    if external_pose is not None:
        yaw, pos_ext = external_pose
        rot = so3.exp_so3(np.array([0.0, 0.0, float(yaw)])) @ rot
        pos = np.asarray(pos_ext, dtype=float).copy()
    vel = np.zeros(3)
    if first_scan_velocity is not None:
        vel = rot @ (np.asarray(ext_rot, float) @ np.asarray(first_scan_velocity, float))
    bg = np.mean([s.gyro for s in static_imu], axis=0)
    x = NavState(
        rot,
        pos,
        vel,
        bg,
        np.zeros(3),
        np.asarray(ext_rot, dtype=float).copy(),
        np.asarray(ext_pos, dtype=float).copy(),
        t=static_imu[-1].t,
    )
    return x, initial_covariance(stds)
