import numpy as np
import pytest

from radarnav import dataset, so3
from radarnav.dataset import (
    DatasetError,
    GroundTruthPose,
    matrix_from_quat,
    quat_from_matrix,
    read_dataset,
    read_point_map,
    read_trajectory,
    write_dataset,
    write_point_map,
    write_trajectory,
)
from radarnav.ins import ImuSample
from radarnav.radar import RadarPoint, RadarScan
from radarnav.sim import Scenario, simulate


def small_sim(tmp_path, gz=False, seed=1):
    out = simulate(Scenario(seed=seed, duration=3.0))
    gt = [
        GroundTruthPose(float(t), p, R)
        for t, p, R in zip(out.gt_times, out.gt_positions, out.gt_rotations)
    ]
    path = tmp_path / ("log.txt.gz" if gz else "log.txt")
    write_dataset(path, out.imu, out.scans, gt)
    return out, gt, path


class TestQuaternions:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            R = so3.exp_so3(rng.normal(scale=1.2, size=3))
            q = quat_from_matrix(R)
            assert q[3] >= 0.0  # canonical sign
            np.testing.assert_allclose(matrix_from_quat(q), R, atol=1e-12)

    def test_unit_norm(self):
        R = so3.exp_so3([0.4, -0.8, 0.3])
        assert abs(np.linalg.norm(quat_from_matrix(R)) - 1.0) < 1e-12


class TestDatasetRoundTrip:
    @pytest.mark.parametrize("gz", [False, True])
    def test_fields_preserved(self, tmp_path, gz):
        out, gt, path = small_sim(tmp_path, gz=gz)
        events = read_dataset(path)
        imu_in = [e[1] for e in events if e[0] == "IMU"]
        scans_in = [e[1] for e in events if e[0] == "RAD"]
        gt_in = [e[1] for e in events if e[0] == "GT"]
        assert len(imu_in) == len(out.imu)
        assert len(scans_in) == len(out.scans)
        assert len(gt_in) == len(gt)
        for a, b in zip(imu_in, out.imu):
            assert abs(a.t - b.t) < 1e-9
            np.testing.assert_allclose(a.accel, b.accel, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(a.gyro, b.gyro, rtol=1e-9, atol=1e-12)
        for a, b in zip(scans_in, out.scans):
            assert len(a) == len(b)
            np.testing.assert_allclose(a.range, b.range, rtol=1e-9)
            np.testing.assert_allclose(a.doppler, b.doppler, rtol=1e-9, atol=1e-12)
        for a, b in zip(gt_in, gt):
            np.testing.assert_allclose(a.position, b.position, rtol=1e-9, atol=1e-12)

    def test_events_globally_sorted(self, tmp_path):
        _, _, path = small_sim(tmp_path)
        events = read_dataset(path)
        times = [e[1].t for e in events]
        assert times == sorted(times)

    def test_parse_rewrite_stable(self, tmp_path):
        _, _, path = small_sim(tmp_path)
        events = read_dataset(path)
        imu = [e[1] for e in events if e[0] == "IMU"]
        scans = [e[1] for e in events if e[0] == "RAD"]
        gt = [e[1] for e in events if e[0] == "GT"]
        path2 = tmp_path / "rewrite.txt"
        write_dataset(path2, imu, scans, gt)
        assert path.read_bytes() == path2.read_bytes()


class TestParserErrors:
    def write(self, tmp_path, text):
        p = tmp_path / "bad.txt"
        p.write_text(text)
        return p

    def test_malformed_record_reports_line(self, tmp_path):
        p = self.write(tmp_path, "IMU 0.1 1 2 3 4 5 6\nIMU 0.2 nope 2 3 4 5 6\n")
        with pytest.raises(DatasetError) as e:
            read_dataset(p)
        assert e.value.lineno == 2

    def test_unknown_tag(self, tmp_path):
        p = self.write(tmp_path, "FOO 0.1 1\n")
        with pytest.raises(DatasetError) as e:
            read_dataset(p)
        assert e.value.lineno == 1

    def test_truncated_scan(self, tmp_path):
        p = self.write(tmp_path, "RAD 0.1 3\n5 0 0 1 10\n6 0 0 1 10\n")
        with pytest.raises(DatasetError):
            read_dataset(p)

    def test_wrong_field_count(self, tmp_path):
        p = self.write(tmp_path, "IMU 0.1 1 2 3\n")
        with pytest.raises(DatasetError) as e:
            read_dataset(p)
        assert e.value.lineno == 1

    def test_non_monotone_per_sensor(self, tmp_path):
        p = self.write(tmp_path, "IMU 0.2 1 2 3 4 5 6\nIMU 0.1 1 2 3 4 5 6\n")
        with pytest.raises(DatasetError) as e:
            read_dataset(p)
        assert e.value.lineno == 2

    def test_fuzzed_lines_raise_dataset_error_only(self, tmp_path):
        rng = np.random.default_rng(1)
        charset = "IMURADGT0123456789. -e\t"
        for trial in range(200):
            n = rng.integers(1, 5)
            text = "\n".join(
                "".join(rng.choice(list(charset), size=rng.integers(0, 40)))
                for _ in range(n)
            )
            p = self.write(tmp_path, text + "\n")
            try:
                read_dataset(p)
            except DatasetError:
                pass  # the only acceptable failure mode


class TestTrajectoryFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = []
        for i in range(20):
            R = so3.exp_so3(rng.normal(scale=0.5, size=3))
            rows.append((0.1 * i, rng.normal(size=3), R))
        p = tmp_path / "traj.txt"
        write_trajectory(p, rows)
        ts, ps, Rs = read_trajectory(p)
        assert len(ts) == 20
        for (t, pos, R), t2, pos2, R2 in zip(rows, ts, ps, Rs):
            assert abs(t - t2) < 1e-9
            np.testing.assert_allclose(pos, pos2, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(R, R2, rtol=1e-7, atol=1e-8)

    def test_rejects_bad_quaternion(self, tmp_path):
        p = tmp_path / "traj.txt"
        p.write_text("0.1 0 0 0 0 0 0 2.0\n")
        with pytest.raises(DatasetError):
            read_trajectory(p)

    def test_rejects_non_monotone(self, tmp_path):
        p = tmp_path / "traj.txt"
        p.write_text("0.2 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n")
        with pytest.raises(DatasetError):
            read_trajectory(p)


class TestPointMap:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        pts = rng.normal(scale=100.0, size=(500, 3))
        p = tmp_path / "map.txt.gz"
        write_point_map(p, pts)
        back = read_point_map(p)
        np.testing.assert_allclose(back, pts, rtol=1e-9, atol=1e-9)

    def test_malformed(self, tmp_path):
        p = tmp_path / "map.txt"
        p.write_text("1 2 3\n4 x 6\n")
        with pytest.raises(DatasetError) as e:
            read_point_map(p)
        assert e.value.lineno == 2
