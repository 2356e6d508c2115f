"""Event-loop orchestration of the full radar-inertial filter.

Processes a time-ordered event stream (IMU / RAD / GT records), performing
static initialization, strapdown propagation, the Doppler update, the
iterated scan-to-local-map update, map maintenance, and (with a prior map)
keyframe accumulation and prior-map updates. Produces the estimated
trajectory, a deterministic event log and wall-time statistics per stage.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ins, matching, maploc, radar
from .config import Config
from .localmap import LocalMap

TIMING_KEYS = ("ImuPredict", "DopplerFusion", "CloudMatch", "TotalTime")


@dataclass
class TimingReport:
    samples: dict = field(default_factory=lambda: {k: [] for k in TIMING_KEYS})

    def add(self, key: str, seconds: float):
        self.samples[key].append(seconds * 1e3)

    def stats(self) -> dict:
        out = {}
        for key in TIMING_KEYS:
            vals = self.samples[key]
            if vals:
                out[key] = {
                    "Min": min(vals),
                    "Max": max(vals),
                    "Mean": sum(vals) / len(vals),
                }
            else:
                out[key] = {"Min": 0.0, "Max": 0.0, "Mean": 0.0}
        return out

    def format_table(self) -> str:
        stats = self.stats()
        lines = ["{:<9} {:>12} {:>14} {:>12} {:>12}".format("", *TIMING_KEYS)]
        for row in ("Min", "Max", "Mean"):
            lines.append(
                "{:<9} {:>12.3f} {:>14.3f} {:>12.3f} {:>12.3f}".format(
                    row + "(ms)", *(stats[k][row] for k in TIMING_KEYS)
                )
            )
        return "\n".join(lines)


@dataclass
class PipelineResult:
    trajectory: list  # (t, position, rotation)
    events: list[str]
    timing: TimingReport
    state: ins.NavState | None = None
    covariance: np.ndarray | None = None


class Pipeline:
    """Single-owner filter driven by a sequential event stream."""

    def __init__(self, cfg: Config, prior_map_points: np.ndarray | None = None):
        self.cfg = cfg
        self.qn = cfg.imu_noise()
        self.rn = cfg.radar_noise()
        self.prm = cfg.match_params()
        self.kfp = cfg.keyframe_params()
        self.ext_rot = cfg.ext_rot_matrix()
        self.ext_pos = np.asarray(cfg.ext_translation, dtype=float)

        self.state: ins.NavState | None = None
        self.P: np.ndarray | None = None
        self.map = LocalMap(
            radius=cfg.map_radius,
            hysteresis=cfg.map_hysteresis,
            voxel_size=cfg.map_voxel_size if cfg.map_voxel_dedup else None,
        )
        self.prior = (
            maploc.PriorMap(prior_map_points)
            if prior_map_points is not None and len(prior_map_points)
            else None
        )
        self.kf_buffer: list = []
        self.frame_index = 0

        self.rng = np.random.default_rng(cfg.ransac_seed)
        self._imu_buffer: list[ins.ImuSample] = []
        self._last_imu: ins.ImuSample | None = None
        self._last_event_t: float | None = None
        self._first_gt = None
        self._imu_time_acc = 0.0

        self.trajectory: list = []
        self.events: list[str] = []
        self.timing = TimingReport()

        if cfg.estimate_extrinsics:
            self.active = np.arange(ins.DIM)
        else:
            self.active = np.arange(15)

    # ---- helpers ------------------------------------------------------

    def log(self, t: float, message: str):
        self.events.append(f"t={t:.6f} {message}")

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def _check_gap(self, t: float):
        if self._last_event_t is not None and t - self._last_event_t > 1.0:
            self.log(t, f"warn sensor gap {t - self._last_event_t:.3f}s")
        self._last_event_t = t

    def _try_initialize(self, scan: radar.RadarScan):
        cfg = self.cfg
        buf = self._imu_buffer
        if not buf or buf[-1].t - buf[0].t < cfg.init_window or len(buf) < cfg.init_min_samples:
            return
        ego = radar.ransac_ego_velocity(
            scan,
            self.rn,
            threshold=cfg.ransac_threshold,
            min_iters=cfg.ransac_min_iters,
            max_iters=cfg.ransac_max_iters,
            confidence=cfg.ransac_confidence,
            rng=self.rng,
        )
        v0 = ego.velocity if ego is not None else None
        if ego is None:
            self.log(scan.t, "init ransac degenerate, zero velocity fallback")
        external = None
        if cfg.init_from_gt and self._first_gt is not None:
            R, p = self._first_gt
            yaw = np.arctan2(R[1, 0], R[0, 0])
            external = (yaw, p)
        try:
            self.state, self.P = ins.initialize(
                buf,
                self.qn,
                cfg.init_stds(),
                self.ext_rot,
                self.ext_pos,
                first_scan_velocity=v0,
                external_pose=external,
                min_samples=cfg.init_min_samples,
            )
        except ins.NotStaticError as e:
            self.log(scan.t, f"init deferred: {e}")
            return
        self.state.t = scan.t
        self.map.center = self.state.pos.copy()
        self.log(scan.t, f"init ok v0={np.linalg.norm(self.state.vel):.3f}m/s")
        self.trajectory.append((self.state.t, self.state.pos.copy(), self.state.rot.copy()))

    def _propagate_to(self, t: float, u: ins.ImuSample):
        dt = t - self.state.t
        if dt <= 1e-9:
            return
        while dt > 0.0:
            step = min(dt, 0.1)
            self.P = ins.propagate_covariance(self.P, self.state, u, step, self.qn)
            self.state = ins.propagate_nominal(self.state, u, step, self.qn)
            dt -= step

    # ---- event handlers -------------------------------------------------

    def handle_imu(self, u: ins.ImuSample):
        self._check_gap(u.t)
        if not self.initialized:
            self._imu_buffer.append(u)
            return
        t0 = time.perf_counter()
        self._propagate_to(u.t, u)
        self._last_imu = u
        self._imu_time_acc += time.perf_counter() - t0

    def handle_gt(self, g):
        if self._first_gt is None:
            self._first_gt = (g.rotation, g.position)

    def handle_scan(self, scan: radar.RadarScan):
        self._check_gap(scan.t)
        if not self.initialized:
            self._try_initialize(scan)
            return
        cfg = self.cfg
        frame_t0 = time.perf_counter()
        imu_ms = self._imu_time_acc
        self._imu_time_acc = 0.0
        if self._last_imu is not None and scan.t > self.state.t:
            self._propagate_to(scan.t, self._last_imu)
        omega_hat = (
            self._last_imu.gyro - self.state.bg if self._last_imu is not None else -self.state.bg
        )

        # Doppler gating + update
        t0 = time.perf_counter()
        static = scan
        if len(scan):
            if cfg.mode in ("full", "doppler-only"):
                gate = radar.gate_doppler(
                    scan,
                    self.state,
                    self.rn,
                    omega_hat,
                    self.P if cfg.doppler_gate_use_state_cov else None,
                    cfg.doppler_gate_sigma,
                )
                static = scan.subset(gate.inlier_mask)
                if gate.skip_update:
                    self.log(scan.t, "doppler all-outlier, update skipped")
                else:
                    self._doppler_update(gate)
            else:
                # without the Doppler update the state velocity is never
                # corrected, so gate dynamic returns against the per-scan
                # RANSAC consensus instead of the predicted state
                ego = radar.ransac_ego_velocity(
                    scan,
                    self.rn,
                    threshold=cfg.ransac_threshold,
                    min_iters=cfg.ransac_min_iters,
                    max_iters=cfg.ransac_max_iters,
                    confidence=cfg.ransac_confidence,
                    rng=self.rng,
                )
                if ego is not None:
                    static = scan.subset(ego.inlier_mask)
        doppler_ms = time.perf_counter() - t0

        # scan matching + map maintenance
        t0 = time.perf_counter()
        matched = 0
        if cfg.mode != "doppler-only":
            static = matching.snr_filter(static, cfg.snr_percentile)
            pts = static.cartesian() if len(static) else np.empty((0, 3))
            covs = (
                radar.point_covariances(static.range, static.azimuth, static.elevation, self.rn)
                if len(static)
                else np.empty((0, 3, 3))
            )
            stationary = (
                np.linalg.norm(self.state.vel) < cfg.match_static_velocity
                and np.linalg.norm(omega_hat) < cfg.match_static_omega
            )
            if stationary:
                self.log(scan.t, "stationary, scan matching skipped")
            else:
                self.state, self.P, info = matching.iterated_update(
                    self.state, self.P, pts, covs, self.map, self.prm, self.active
                )
                matched = info.matched
                if not info.applied and len(self.map):
                    self.log(scan.t, f"scanmatch skipped matches={info.matched}")
            inserted, recentred = matching.augment_map(self.map, pts, self.state)
            if recentred:
                self.log(scan.t, f"map recentred size={len(self.map)}")
            if self.prior is not None:
                self._accumulate_keyframe(static, pts, scan.t)
        else:
            static = matching.snr_filter(static, cfg.snr_percentile)
        cloud_ms = time.perf_counter() - t0

        self.P = ins.symmetrize(self.P)
        self.frame_index += 1
        self.trajectory.append((scan.t, self.state.pos.copy(), self.state.rot.copy()))
        self.log(
            scan.t,
            f"frame mode={cfg.mode} points={len(scan)} static={len(static)} "
            f"matched={matched} map={len(self.map)}",
        )

        total = imu_ms + (time.perf_counter() - frame_t0)
        self.timing.add("ImuPredict", imu_ms)
        self.timing.add("DopplerFusion", doppler_ms)
        self.timing.add("CloudMatch", cloud_ms)
        self.timing.add("TotalTime", total)

    # ---- update stages ---------------------------------------------------

    def _doppler_update(self, gate: radar.DopplerGateResult):
        mask = gate.inlier_mask
        z = gate.residual[mask]
        H = gate.H[mask][:, self.active]
        var = gate.variance[mask]
        P = self.P[np.ix_(self.active, self.active)]
        S = H @ P @ H.T + np.diag(var)
        K = P @ H.T @ np.linalg.inv(S)
        dx = np.zeros(ins.DIM)
        dx[self.active] = -K @ z
        IKH = np.eye(len(self.active)) - K @ H
        P_new = self.P.copy()
        if self.prm.joseph_form:
            P_new[np.ix_(self.active, self.active)] = IKH @ P @ IKH.T + (K * var) @ K.T
        else:
            P_new[np.ix_(self.active, self.active)] = IKH @ P
        self.state, self.P = ins.inject_and_reset(self.state, ins.symmetrize(P_new), dx)

    def _accumulate_keyframe(self, static: radar.RadarScan, pts: np.ndarray, t: float):
        covs = (
            radar.point_covariances(static.range, static.azimuth, static.elevation, self.rn)
            if len(static)
            else np.empty((0, 3, 3))
        )
        self.kf_buffer.append((pts, covs, (self.state.rot.copy(), self.state.pos.copy())))
        if len(self.kf_buffer) < self.kfp.frames:
            return
        kf = maploc.accumulate_keyframe(self.kf_buffer, self.ext_rot, self.ext_pos, t)
        self.kf_buffer = []
        keep = maploc.voxel_outlier_mask(kf.points, self.kfp.voxel_size, self.kfp.dist_threshold)
        kf = maploc.Keyframe(kf.t, kf.points[keep], kf.covariances[keep], kf.frame_ids[keep], kf.span)
        if kf.points.shape[0] < self.prm.min_matches:
            self.log(t, "keyframe too small after outlier removal, skipped")
            return
        self.state, self.P, info = maploc.prior_map_update(
            self.state, self.P, kf, self.prior, self.prm, self.active
        )
        self.log(
            t,
            f"prior-map update matched={info.matched} iters={info.iterations} "
            f"applied={info.applied}",
        )


def run_pipeline(events, cfg: Config, prior_map_points=None) -> PipelineResult:
    """Drive a Pipeline over a parsed event stream (see dataset.read_dataset)."""
    pipe = Pipeline(cfg, prior_map_points)
    for kind, payload in events:
        if kind == "IMU":
            pipe.handle_imu(payload)
        elif kind == "RAD":
            pipe.handle_scan(payload)
        elif kind == "GT":
            pipe.handle_gt(payload)
        else:
            raise ValueError(f"unknown event kind {kind!r}")
    if not pipe.initialized:
        raise RuntimeError("pipeline never initialized (no static IMU window before a scan?)")
    return PipelineResult(pipe.trajectory, pipe.events, pipe.timing, pipe.state, pipe.P)
