"""Line-oriented dataset log and TUM-style trajectory files.

Dataset records, one per line, SI units and radians:

    IMU t ax ay az wx wy wz
    RAD t n          (followed by n lines: r az el doppler snr)
    GT  t px py pz qx qy qz qw

Trajectory files carry ``t px py pz qx qy qz qw`` per line. Paths ending in
``.gz`` are read and written through gzip transparently.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _R

from .ins import ImuSample
from .radar import RadarScan


class DatasetError(ValueError):
    """Malformed dataset or trajectory content; carries the line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class GroundTruthPose:
    t: float
    position: np.ndarray
    rotation: np.ndarray  # 3x3


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        if "w" in mode:
            # fixed mtime and no embedded filename keep repeated
            # writes byte-identical
            import io

            fileobj = open(path, "wb")
            raw = gzip.GzipFile(filename="", fileobj=fileobj, mode="wb", mtime=0)
            wrapper = io.TextIOWrapper(raw, newline="")
            close = wrapper.close

            def close_all():
                close()
                fileobj.close()

            wrapper.close = close_all
            return wrapper
        return gzip.open(path, mode + "t")
    return open(path, mode)


def _fmt(values) -> str:
    return " ".join(f"{v:.10g}" for v in values)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw), sign fixed so qw >= 0."""
    q = _R.from_matrix(R).as_quat()
    if q[3] < 0:
        q = -q
    return q


def matrix_from_quat(q) -> np.ndarray:
    return _R.from_quat(np.asarray(q, dtype=float)).as_matrix()


def write_dataset(path, imu, scans, gt=None):
    """Write the merged, time-sorted log.

    ``gt`` entries may be (t, p, R) tuples or GroundTruthPose objects.
    """
    events = [("IMU", s.t, s) for s in imu]
    events += [("RAD", sc.t, sc) for sc in scans]
    if gt is not None:
        for g in gt:
            if isinstance(g, GroundTruthPose):
                events.append(("GT", g.t, (g.position, g.rotation)))
            else:
                t, p, R = g
                events.append(("GT", t, (p, R)))
    order = {"IMU": 0, "RAD": 1, "GT": 2}
    events.sort(key=lambda e: (e[1], order[e[0]]))
    with _open(path, "w") as f:
        for kind, t, payload in events:
            if kind == "IMU":
                f.write(f"IMU {t:.9f} {_fmt(payload.accel)} {_fmt(payload.gyro)}\n")
            elif kind == "RAD":
                f.write(f"RAD {t:.9f} {len(payload)}\n")
                for r, az, el, d, snr in zip(
                    payload.range, payload.azimuth, payload.elevation, payload.doppler, payload.snr
                ):
                    f.write(f"{_fmt((r, az, el, d, snr))}\n")
            else:
                p, R = payload
                q = quat_from_matrix(R)
                f.write(f"GT {t:.9f} {_fmt(p)} {_fmt(q)}\n")


def _floats(parts, lineno, expect):
    if len(parts) != expect:
        raise DatasetError(lineno, f"expected {expect} fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise DatasetError(lineno, str(e)) from None


def read_dataset(path):
    """Parse a dataset log into a time-ordered event list.

    Returns a list of ("IMU", ImuSample) / ("RAD", RadarScan) /
    ("GT", GroundTruthPose) tuples sorted by timestamp (IMU first on ties).
    Raises DatasetError with the offending line number on malformed input.
    """
    imu, scans, gt = [], [], []
    with _open(path, "r") as f:
        lines = f.readlines()
    last_t = {"IMU": -np.inf, "RAD": -np.inf, "GT": -np.inf}
    i = 0
    n_lines = len(lines)
    while i < n_lines:
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "IMU":
            vals = _floats(parts[1:], lineno, 7)
            try:
                imu.append(ImuSample(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
            except ValueError as e:
                raise DatasetError(lineno, str(e)) from None
        elif kind == "RAD":
            vals = _floats(parts[1:], lineno, 2)
            t, count = vals[0], int(vals[1])
            if count < 0 or vals[1] != count:
                raise DatasetError(lineno, "point count must be a non-negative integer")
            if i + count > n_lines:
                raise DatasetError(lineno, f"truncated scan: {count} points declared")
            rows = np.empty((count, 5))
            for j in range(count):
                rows[j] = _floats(lines[i + j].split(), i + j + 1, 5)
            i += count
            if count and not (rows[:, 0] > 0).all():
                raise DatasetError(lineno, "non-positive range in scan")
            scans.append(RadarScan(t, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4]))
        elif kind == "GT":
            vals = _floats(parts[1:], lineno, 8)
            q = np.array(vals[4:8])
            nq = np.linalg.norm(q)
            if abs(nq - 1.0) > 1e-6:
                raise DatasetError(lineno, "ground-truth quaternion not normalized")
            gt.append(GroundTruthPose(vals[0], np.array(vals[1:4]), matrix_from_quat(q / nq)))
        else:
            raise DatasetError(lineno, f"unknown record type {kind!r}")
        t = imu[-1].t if kind == "IMU" else (scans[-1].t if kind == "RAD" else gt[-1].t)
        if t < last_t[kind]:
            raise DatasetError(lineno, f"{kind} timestamps decrease")
        last_t[kind] = t

    events = [("IMU", s) for s in imu] + [("RAD", s) for s in scans] + [("GT", g) for g in gt]
    order = {"IMU": 0, "RAD": 1, "GT": 2}
    events.sort(key=lambda e: (e[1].t, order[e[0]]))
    return events


def write_trajectory(path, rows):
    """rows: iterable of (t, position (3,), rotation (3,3))."""
    with _open(path, "w") as f:
        for t, p, R in rows:
            q = quat_from_matrix(R)
            f.write(f"{t:.9f} {_fmt(p)} {_fmt(q)}\n")


def read_trajectory(path):
    """Returns (t (n,), positions (n, 3), rotations (n, 3, 3))."""
    ts, ps, Rs = [], [], []
    with _open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = _floats(line.split(), lineno, 8)
            q = np.array(vals[4:8])
            nq = np.linalg.norm(q)
            if abs(nq - 1.0) > 1e-6:
                raise DatasetError(lineno, "quaternion not normalized")
            if ts and vals[0] < ts[-1]:
                raise DatasetError(lineno, "timestamps must be monotone")
            ts.append(vals[0])
            ps.append(vals[1:4])
            Rs.append(matrix_from_quat(q / nq))
    return np.array(ts), np.array(ps).reshape(-1, 3), np.array(Rs).reshape(-1, 3, 3)


def write_point_map(path, points):
    """World / prior-map point list: ``x y z`` per line."""
    with _open(path, "w") as f:
        for p in np.asarray(points, dtype=float):
            f.write(f"{_fmt(p)}\n")


def read_point_map(path) -> np.ndarray:
    pts = []
    with _open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pts.append(_floats(line.split(), lineno, 3))
    return np.asarray(pts, dtype=float).reshape(-1, 3)
