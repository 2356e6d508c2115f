"""Deterministic synthetic-flight generator.

Produces ground-truth trajectories with analytic derivatives, IMU streams,
radar scans (Doppler, SNR, noise, labeled dynamic outliers) and the world
point set, all reproducible from a single seed. Serves as the oracle for
the end-to-end tests.

Conventions: trajectories fly near z = 0 and the world surface sits at
z = -altitude, so the filter's zero-position initialization is consistent
with ground truth and simulator worlds can be loaded directly as prior
maps. IMU samples are interval-representative: the sample stamped t was
evaluated at t - dt/2, matching the pipeline's convention of propagating
across [t - dt, t] with the arriving sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import so3
from .ins import ImuNoiseParams, ImuSample
from .radar import RadarNoiseParams, RadarScan


@dataclass
class Scenario:
    seed: int = 0
    duration: float = 60.0
    imu_rate: float = 100.0
    radar_rate: float = 10.0

    # trajectory
    trajectory: str = "figure8"  # hover | circle | figure8
    altitude: float = 50.0  # height above the world surface, m
    amp_x: float = 180.0
    amp_y: float = 120.0
    period: float = 120.0  # s per trajectory cycle
    circle_radius: float = 50.0
    yaw_mode: str = "fixed"  # fixed | follow
    yaw: float = 0.0
    hold: float = 1.0  # initial static interval, s
    ramp: float = 5.0  # speed ramp-up, s

    # world
    world: str = "structured"  # structured | degraded
    world_margin: float = 120.0
    point_density: float = 1.0  # points per m^2
    buildings: int = 12
    surface_roughness: float = 0.05

    # radar sensing
    points_per_scan: int = 250
    fov_deg: float = 60.0
    max_range: float = 400.0
    min_range: float = 1.0
    dynamic_rate: float = 0.0  # fraction of points made dynamic outliers
    dynamic_offset_sigmas: float = 10.0  # Doppler offset in sigma_doppler units
    snr_mean: float = 25.0
    snr_std: float = 4.0
    snr_low_frac: float = 0.07
    snr_low_mean: float = 8.0
    snr_low_std: float = 2.0

    noiseless: bool = False
    radar_noise: RadarNoiseParams = field(default_factory=RadarNoiseParams)
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    # radar mounted looking down: radar +x (boresight) = body -z
    ext_rot: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    )
    ext_pos: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.0, -0.05]))

    def __post_init__(self):
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.ext_rot = np.asarray(self.ext_rot, dtype=float)
        self.ext_pos = np.asarray(self.ext_pos, dtype=float)


class DynamicsBoundError(ValueError):
    """Trajectory spec exceeds the configured dynamics limits."""


def _smoothstep(u):
    """Quintic smoothstep and its first two derivatives (C^2 ramp)."""
    u = np.clip(u, 0.0, 1.0)
    s = u**3 * (6.0 * u * u - 15.0 * u + 10.0)
    ds = 30.0 * u * u * (u - 1.0) ** 2
    dds = 60.0 * u * (2.0 * u * u - 3.0 * u + 1.0)
    return s, ds, dds


class Trajectory:
    """C^2 ground-truth trajectory with analytic derivatives.

    The base curve is reparameterized through a time warp that holds still
    for ``hold`` seconds and then ramps to unit rate over ``ramp`` seconds,
    so every run starts from a genuine static interval.
    """

    MAX_ACCEL = 25.0  # m/s^2 dynamics bound

    def __init__(self, s: Scenario):
        self.s = s
        self._check_bounds()

    # ---- time warp -------------------------------------------------

    def _warp(self, t):
        t = np.asarray(t, dtype=float)
        s = self.s
        u = (t - s.hold) / s.ramp
        step, dstep, ddstep = _smoothstep(u)
        before = t < s.hold
        during = (t >= s.hold) & (t < s.hold + s.ramp)
        # integral of the quintic smoothstep: u^6 - 3 u^5 + 2.5 u^4
        uc = np.clip(u, 0.0, 1.0)
        integ = s.ramp * (uc**6 - 3.0 * uc**5 + 2.5 * uc**4)
        w = np.where(before, 0.0, np.where(during, integ, 0.5 * s.ramp + (t - s.hold - s.ramp)))
        dw = np.where(before, 0.0, np.where(during, step, 1.0))
        ddw = np.where(during, dstep / s.ramp, 0.0)
        return w, dw, ddw

    # ---- base curves (functions of warped time) ----------------------

    def _base(self, w):
        s = self.s
        w = np.asarray(w, dtype=float)
        zeros = np.zeros_like(w)
        if s.trajectory == "hover":
            p = np.stack([zeros, zeros, zeros], axis=-1)
            return p, np.zeros_like(p), np.zeros_like(p)
        om = 2.0 * np.pi / s.period
        if s.trajectory == "circle":
            r = s.circle_radius
            c, si = np.cos(om * w), np.sin(om * w)
            p = np.stack([r * (c - 1.0), r * si, zeros], axis=-1)
            v = np.stack([-r * om * si, r * om * c, zeros], axis=-1)
            a = np.stack([-r * om * om * c, -r * om * om * si, zeros], axis=-1)
            return p, v, a
        if s.trajectory == "figure8":
            ax, ay = s.amp_x, s.amp_y
            p = np.stack([ax * np.sin(om * w), 0.5 * ay * np.sin(2.0 * om * w), zeros], axis=-1)
            v = np.stack(
                [ax * om * np.cos(om * w), ay * om * np.cos(2.0 * om * w), zeros], axis=-1
            )
            a = np.stack(
                [
                    -ax * om * om * np.sin(om * w),
                    -2.0 * ay * om * om * np.sin(2.0 * om * w),
                    zeros,
                ],
                axis=-1,
            )
            return p, v, a
        raise ValueError(f"unknown trajectory kind {self.s.trajectory!r}")

    def _check_bounds(self):
        w = np.linspace(0.0, 2.0 * self.s.period, 2048)
        _, _, a = self._base(w)
        if np.linalg.norm(a, axis=-1).max() > self.MAX_ACCEL:
            raise DynamicsBoundError("trajectory acceleration exceeds bound")

    # ---- public sampling --------------------------------------------

    def position(self, t):
        w, _, _ = self._warp(t)
        return self._base(w)[0]

    def velocity(self, t):
        w, dw, _ = self._warp(t)
        _, v, _ = self._base(w)
        return v * dw[..., None]

    def acceleration(self, t):
        w, dw, ddw = self._warp(t)
        _, v, a = self._base(w)
        return a * (dw**2)[..., None] + v * ddw[..., None]

    def _yaw(self, w):
        s = self.s
        if s.yaw_mode == "fixed" or s.trajectory == "hover":
            zeros = np.zeros_like(np.asarray(w, dtype=float))
            return zeros + s.yaw, zeros
        _, v, a = self._base(w)
        vx, vy = v[..., 0], v[..., 1]
        speed2 = vx * vx + vy * vy
        yaw = np.arctan2(vy, vx)
        yaw_rate_per_w = (vx * a[..., 1] - vy * a[..., 0]) / speed2
        return yaw, yaw_rate_per_w

    def rotation(self, t):
        """Attitude matrices (body -> world), shape t.shape + (3, 3)."""
        w, _, _ = self._warp(t)
        yaw, _ = self._yaw(w)
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.zeros(np.shape(yaw) + (3, 3))
        R[..., 0, 0] = c
        R[..., 0, 1] = -s
        R[..., 1, 0] = s
        R[..., 1, 1] = c
        R[..., 2, 2] = 1.0
        return R

    def omega_body(self, t):
        w, dw, _ = self._warp(t)
        _, rate_per_w = self._yaw(w)
        out = np.zeros(np.shape(np.asarray(t, dtype=float)) + (3,))
        out[..., 2] = rate_per_w * dw
        return out


def generate_trajectory(s: Scenario) -> Trajectory:
    return Trajectory(s)


def generate_world(s: Scenario, rng: np.random.Generator | None = None) -> np.ndarray:
    """World point set: ground plane at z = -altitude, plus buildings when
    structured. Sampled at roughly ``point_density`` points per m^2.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([s.seed, 17]))
    traj = Trajectory(s)
    t = np.linspace(0.0, s.duration, 512)
    p = traj.position(t)
    x0, x1 = p[:, 0].min() - s.world_margin, p[:, 0].max() + s.world_margin
    y0, y1 = p[:, 1].min() - s.world_margin, p[:, 1].max() + s.world_margin
    z_ground = -s.altitude

    area = (x1 - x0) * (y1 - y0)
    n_ground = int(area * s.point_density)
    pts = np.empty((n_ground, 3))
    pts[:, 0] = rng.uniform(x0, x1, n_ground)
    pts[:, 1] = rng.uniform(y0, y1, n_ground)
    pts[:, 2] = z_ground + rng.normal(0.0, s.surface_roughness, n_ground)
    parts = [pts]

    if s.world == "structured":
        for _ in range(s.buildings):
            cx = rng.uniform(x0 + 20.0, x1 - 20.0)
            cy = rng.uniform(y0 + 20.0, y1 - 20.0)
            wx = rng.uniform(10.0, 30.0)
            wy = rng.uniform(10.0, 30.0)
            h = rng.uniform(6.0, 20.0)
            # roof
            n_roof = max(int(wx * wy * s.point_density), 4)
            roof = np.empty((n_roof, 3))
            roof[:, 0] = rng.uniform(cx - wx / 2, cx + wx / 2, n_roof)
            roof[:, 1] = rng.uniform(cy - wy / 2, cy + wy / 2, n_roof)
            roof[:, 2] = z_ground + h + rng.normal(0.0, s.surface_roughness, n_roof)
            parts.append(roof)
            # four walls
            for axis, side in ((0, -1), (0, 1), (1, -1), (1, 1)):
                length = wy if axis == 0 else wx
                n_wall = max(int(length * h * s.point_density), 4)
                wall = np.empty((n_wall, 3))
                if axis == 0:
                    wall[:, 0] = cx + side * wx / 2
                    wall[:, 1] = rng.uniform(cy - wy / 2, cy + wy / 2, n_wall)
                else:
                    wall[:, 0] = rng.uniform(cx - wx / 2, cx + wx / 2, n_wall)
                    wall[:, 1] = cy + side * wy / 2
                wall[:, 2] = z_ground + rng.uniform(0.0, h, n_wall)
                parts.append(wall)
    elif s.world != "degraded":
        raise ValueError(f"unknown world kind {s.world!r}")
    return np.vstack(parts)


def synthesize_imu(
    traj: Trajectory,
    s: Scenario,
    rng: np.random.Generator,
) -> list[ImuSample]:
    """IMU stream over [dt, duration]; see module docstring for the
    interval-midpoint evaluation convention."""
    q = s.imu_noise
    dt = 1.0 / s.imu_rate
    n = int(round(s.duration * s.imu_rate))
    stamps = (np.arange(n) + 1) * dt
    teval = stamps - 0.5 * dt
    R = traj.rotation(teval)
    a_w = traj.acceleration(teval)
    omega = traj.omega_body(teval)
    accel = np.einsum("tji,tj->ti", R, a_w - q.gravity)  # R^T (a - g)
    accel = accel + s.accel_bias
    gyro = omega + s.gyro_bias
    if not s.noiseless:
        accel = accel + rng.normal(0.0, q.accel_noise / np.sqrt(dt), (n, 3))
        gyro = gyro + rng.normal(0.0, q.gyro_noise / np.sqrt(dt), (n, 3))
    return [ImuSample(float(t), a, g) for t, a, g in zip(stamps, accel, gyro)]


def synthesize_radar(
    traj: Trajectory,
    world: np.ndarray,
    s: Scenario,
    rng: np.random.Generator,
) -> list[RadarScan]:
    """Radar scans with per-point dynamic-outlier labels."""
    n = s.radar_noise
    tree = cKDTree(world)
    dtr = 1.0 / s.radar_rate
    count = int(np.floor(s.duration * s.radar_rate))
    stamps = (np.arange(count) + 1) * dtr
    fov = np.deg2rad(s.fov_deg)
    boresight = np.array([1.0, 0.0, 0.0])
    scans = []
    for t in stamps:
        R = traj.rotation(t)
        p = traj.position(t)
        v = traj.velocity(t)
        omega = traj.omega_body(t)
        R_s = R @ s.ext_rot  # radar -> world
        p_s = R @ s.ext_pos + p
        reach = min(s.max_range, s.altitude / max(np.cos(fov), 1e-3) + 50.0)
        cand = tree.query_ball_point(p_s, reach)
        if not cand:
            scans.append(RadarScan(float(t), *(np.empty(0),) * 5, np.empty(0, bool)))
            continue
        local = (world[cand] - p_s) @ R_s  # radar frame
        r = np.linalg.norm(local, axis=1)
        ok = (r >= s.min_range) & (r <= s.max_range)
        ok &= (local @ boresight) >= r * np.cos(fov)
        local = local[ok]
        r = r[ok]
        m = min(s.points_per_scan, local.shape[0])
        if m < local.shape[0]:
            sel = rng.choice(local.shape[0], size=m, replace=False)
            local, r = local[sel], r[sel]

        az = np.arctan2(local[:, 1], local[:, 0])
        el = np.arcsin(np.clip(local[:, 2] / r, -1.0, 1.0))
        v_sensor_world = v + R @ np.cross(omega, s.ext_pos)
        v_sensor = R_s.T @ v_sensor_world
        doppler = (local / r[:, None]) @ v_sensor

        labels = np.zeros(m, dtype=bool)
        if s.noiseless:
            snr = np.full(m, s.snr_mean)
        else:
            r = r + rng.normal(0.0, n.sigma_range, m)
            az = az + rng.normal(0.0, n.sigma_azimuth, m)
            el = el + rng.normal(0.0, n.sigma_elevation, m)
            doppler = doppler + rng.normal(0.0, n.sigma_doppler, m)
            low = rng.random(m) < s.snr_low_frac
            snr = np.where(
                low,
                rng.normal(s.snr_low_mean, s.snr_low_std, m),
                rng.normal(s.snr_mean, s.snr_std, m),
            )
            if s.dynamic_rate > 0.0:
                labels = rng.random(m) < s.dynamic_rate
                signs = np.where(rng.random(m) < 0.5, -1.0, 1.0)
                doppler = doppler + labels * signs * s.dynamic_offset_sigmas * n.sigma_doppler
            r = np.maximum(r, 1e-3)
        scans.append(RadarScan(float(t), r, az, el, doppler, snr, labels))
    return scans


@dataclass
class SimOutput:
    imu: list
    scans: list
    gt_times: np.ndarray
    gt_positions: np.ndarray
    gt_rotations: np.ndarray
    world: np.ndarray
    trajectory: Trajectory


def simulate(s: Scenario) -> SimOutput:
    """Run the full generator; deterministic for a given scenario."""
    root = np.random.SeedSequence(s.seed)
    rng_world, rng_imu, rng_radar = (np.random.default_rng(ss) for ss in root.spawn(3))
    traj = Trajectory(s)
    world = generate_world(s, rng_world)
    imu = synthesize_imu(traj, s, rng_imu)
    scans = synthesize_radar(traj, world, s, rng_radar)
    gt_times = np.array([sc.t for sc in scans])
    if gt_times.size:
        gt_positions = traj.position(gt_times)
        gt_rotations = traj.rotation(gt_times)
    else:
        gt_positions = np.empty((0, 3))
        gt_rotations = np.empty((0, 3, 3))
    return SimOutput(imu, scans, gt_times, gt_positions, gt_rotations, world, traj)
