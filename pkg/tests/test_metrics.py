import numpy as np
import pytest

from radarnav import so3
from radarnav.metrics import EvaluationError, ape_rmse, associate, loop_closure_error


def make_traj(ts, positions, rotations=None):
    ts = np.asarray(ts, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if rotations is None:
        rotations = np.tile(np.eye(3), (len(ts), 1, 1))
    return ts, positions, np.asarray(rotations)


def circle_traj(n=50, radius=20.0):
    ts = np.linspace(0.0, 10.0, n)
    ang = np.linspace(0.0, 2 * np.pi, n)
    pos = radius * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(n)])
    return make_traj(ts, pos)


class TestAssociate:
    def test_exact_match(self):
        t = np.linspace(0, 1, 11)
        pairs = associate(t, t)
        assert pairs == [(i, i) for i in range(11)]

    def test_window_excludes_distant_stamps(self):
        assert associate(np.array([0.0, 1.0]), np.array([0.5]), max_dt=0.01) == []

    def test_nearest_within_window(self):
        pairs = associate(np.array([0.1, 0.2]), np.array([0.095, 0.205]), max_dt=0.01)
        assert pairs == [(0, 0), (1, 1)]


class TestApeRmse:
    def test_identical_trajectories(self):
        traj = circle_traj()
        t_rmse, r_rmse = ape_rmse(traj, traj)
        assert t_rmse == pytest.approx(0.0, abs=1e-12)
        assert r_rmse == pytest.approx(0.0, abs=1e-6)

    def test_constant_offset_removed_by_first_pose_alignment(self):
        gt = circle_traj()
        est = (gt[0], gt[1] + np.array([1.0, 0.0, 0.0]), gt[2])
        t_rmse, _ = ape_rmse(est, gt, align="first")
        assert t_rmse == pytest.approx(0.0, abs=1e-12)
        t_rmse_raw, _ = ape_rmse(est, gt, align="none")
        assert t_rmse_raw == pytest.approx(1.0, abs=1e-12)

    def test_pure_yaw_error(self):
        ts = np.linspace(0, 5, 20)
        pos = np.zeros((20, 3))
        gt = make_traj(ts, pos)
        Ryaw = so3.exp_so3([0.0, 0.0, np.deg2rad(10.0)])
        est = make_traj(ts, pos, np.tile(Ryaw, (20, 1, 1)))
        _, r_rmse = ape_rmse(est, gt, align="none")
        assert r_rmse == pytest.approx(10.0, abs=1e-9)

    def test_unknown_alignment_mode(self):
        traj = circle_traj()
        with pytest.raises(ValueError):
            ape_rmse(traj, traj, align="umeyama")

    def test_too_few_pairs(self):
        short = circle_traj(n=5)
        with pytest.raises(EvaluationError):
            ape_rmse(short, short)

    def test_disjoint_times(self):
        a = circle_traj()
        b = (a[0] + 100.0, a[1], a[2])
        with pytest.raises(EvaluationError):
            ape_rmse(a, b)


class TestLoopClosure:
    def test_closed_loop(self):
        assert loop_closure_error(circle_traj()) == pytest.approx(0.0, abs=1e-9)

    def test_straight_path(self):
        ts = np.linspace(0, 10, 30)
        pos = np.column_stack([np.linspace(0, 100, 30), np.zeros(30), np.zeros(30)])
        assert loop_closure_error(make_traj(ts, pos)) == pytest.approx(100.0)

    def test_injected_drift(self):
        d = np.array([0.3, -0.7, 0.2])
        ts, pos, rots = circle_traj()
        pos = pos.copy()
        pos[-1] += d
        assert loop_closure_error((ts, pos, rots)) == pytest.approx(np.linalg.norm(d), abs=1e-9)

    def test_requires_two_poses(self):
        ts, pos, rots = circle_traj()
        with pytest.raises(EvaluationError):
            loop_closure_error((ts[:1], pos[:1], rots[:1]))
