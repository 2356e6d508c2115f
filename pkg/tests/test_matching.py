import numpy as np
import pytest

from radarnav import ins, matching, radar, so3
from radarnav.ins import NavState
from radarnav.localmap import LocalMap
from radarnav.matching import (
    CHI2_95_DOF3,
    MatchParams,
    NeighborhoodGaussian,
    chi2_gate,
    fit_neighborhood,
    iterated_update,
    p2d_residual,
    snr_filter,
)
from radarnav.radar import RadarNoiseParams, RadarPoint, RadarScan


def make_scan(points_xyz, snr):
    pts = [RadarPoint.from_cartesian(p, doppler=0.0, snr=s) for p, s in zip(points_xyz, snr)]
    return RadarScan.from_points(0.0, pts)


class TestSnrFilter:
    def test_uniform_snr_untouched(self):
        rng = np.random.default_rng(0)
        scan = make_scan(rng.normal(scale=10, size=(20, 3)), np.full(20, 12.0))
        assert len(snr_filter(scan)) == 20

    def test_small_scan_untouched(self):
        rng = np.random.default_rng(1)
        scan = make_scan(rng.normal(scale=10, size=(3, 3)), [1.0, 2.0, 3.0])
        assert len(snr_filter(scan)) == 3

    def test_drops_bottom_percentile(self):
        rng = np.random.default_rng(2)
        snr = np.arange(1.0, 101.0)
        scan = make_scan(rng.normal(scale=10, size=(100, 3)), snr)
        out = snr_filter(scan)
        assert len(out) == 95
        assert out.snr.min() > 5.0


class TestFitNeighborhood:
    def test_identical_points_degenerate_cluster(self):
        prm = MatchParams()
        m = LocalMap()
        q = np.array([1.0, 2.0, 3.0])
        m.insert(np.tile(q, (prm.k, 1)))
        g = fit_neighborhood(m, q, prm)
        np.testing.assert_allclose(g.centroid, q)
        np.testing.assert_allclose(g.covariance, prm.epsilon * np.eye(3), atol=1e-15)

    def test_matches_direct_formulas_bit_identically(self):
        prm = MatchParams(k=20, assoc_radius=100.0)
        rng = np.random.default_rng(3)
        pts = rng.multivariate_normal([5, -1, 2], np.diag([1.0, 2.0, 0.5]), size=20)
        m = LocalMap()
        m.insert(pts)
        g = fit_neighborhood(m, np.array([5.0, -1.0, 2.0]), prm)
        assert g.count == 20
        # same neighborhood ordering as the k-NN query, direct formulas
        _, idx = m.knn(np.array([5.0, -1.0, 2.0]), 20)
        neigh = m.points[idx[0]]
        centroid = neigh.mean(axis=0)
        d = neigh - centroid
        cov = (d.T @ d) / 20 * prm.inflation + prm.epsilon * np.eye(3)
        np.testing.assert_array_equal(g.centroid, centroid)
        np.testing.assert_array_equal(g.covariance, cov)

    def test_out_of_radius_returns_none(self):
        prm = MatchParams(assoc_radius=2.0)
        m = LocalMap()
        m.insert(np.zeros((5, 3)) + [10.0, 0, 0])
        assert fit_neighborhood(m, np.zeros(3), prm) is None

    def test_empty_map_returns_none(self):
        assert fit_neighborhood(LocalMap(), np.zeros(3), MatchParams()) is None


class TestP2dResidual:
    def test_zero_at_centroid(self):
        n = RadarNoiseParams()
        x = NavState.identity()
        pt = RadarPoint.from_cartesian([3.0, 1.0, -2.0], 0.0, 10.0)
        g = NeighborhoodGaussian(pt.cartesian, np.eye(3), 10)
        res, H, Rb = p2d_residual(pt, x, g, n)
        np.testing.assert_allclose(res, np.zeros(3), atol=1e-12)

    def test_identity_closed_form(self):
        n = RadarNoiseParams()
        x = NavState.identity()
        pt = RadarPoint.from_cartesian([1.0, 0.0, 0.0], 0.0, 10.0)
        g = NeighborhoodGaussian(np.zeros(3), np.eye(3), 10)
        res, _, _ = p2d_residual(pt, x, g, n)
        np.testing.assert_allclose(res, [1.0, 0, 0], atol=1e-12)

    def test_jacobian_vs_finite_differences(self):
        n = RadarNoiseParams()
        rng = np.random.default_rng(4)
        eps = 1e-6
        worst = 0.0
        for _ in range(30):
            x = NavState(
                so3.exp_so3(rng.normal(scale=0.7, size=3)),
                rng.normal(scale=3.0, size=3),
                rng.normal(scale=1.0, size=3),
                np.zeros(3),
                np.zeros(3),
                so3.exp_so3(rng.normal(scale=0.7, size=3)),
                rng.normal(scale=0.2, size=3),
                t=0.0,
            )
            pt = RadarPoint.from_cartesian(rng.normal(scale=10, size=3), 0.0, 10.0)
            g = NeighborhoodGaussian(rng.normal(scale=10, size=3), np.eye(3), 10)
            _, H, _ = p2d_residual(pt, x, g, n)
            for j in range(ins.DIM):
                dx = np.zeros(ins.DIM)
                dx[j] = eps
                xf, _ = ins.inject_and_reset(x, np.eye(ins.DIM), dx)
                xb, _ = ins.inject_and_reset(x, np.eye(ins.DIM), -dx)
                rf, _, _ = p2d_residual(pt, xf, g, n)
                rb, _, _ = p2d_residual(pt, xb, g, n)
                num = (rf - rb) / (2 * eps)
                scale = max(1.0, np.abs(H[:, j]).max())
                worst = max(worst, np.abs(H[:, j] - num).max() / scale)
        assert worst < 1e-4


class TestChi2Gate:
    def test_zero_residual_keeps(self):
        assert chi2_gate(np.zeros(3), np.eye(3), np.zeros((3, ins.DIM)), np.eye(ins.DIM))

    def test_large_residual_rejected(self):
        # squared Mahalanobis distance 100 exceeds the 7.815 cutoff
        assert not chi2_gate(
            np.array([10.0, 0, 0]), np.eye(3) * 0.5, np.zeros((3, ins.DIM)), np.eye(ins.DIM) * 0.5
        )

    def test_unit_residual_kept(self):
        assert chi2_gate(
            np.array([1.0, 0, 0]), np.eye(3) * 0.5, np.zeros((3, ins.DIM)), np.eye(ins.DIM) * 0.5
        )

    def test_threshold_value(self):
        assert CHI2_95_DOF3 == pytest.approx(7.815, abs=1e-3)


def dense_grid_map(spacing=0.4, half=12.0, z=0.0, jitter=None, seed=0):
    xs = np.arange(-half, half + spacing / 2, spacing)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    if jitter:
        pts = pts + np.random.default_rng(seed).normal(scale=jitter, size=pts.shape)
    m = LocalMap()
    m.insert(pts)
    return m


class TestIteratedUpdate:
    def scan_from_map(self, lmap, x, n_points, rng):
        """Radar-frame points sampled from map points (exact alignment)."""
        idx = rng.choice(len(lmap), size=n_points, replace=False)
        p_world = lmap.points[idx]
        p_body = (p_world - x.pos) @ x.rot
        p_radar = (p_body - x.ext_pos) @ x.ext_rot
        return p_radar

    def test_aligned_scan_is_fixed_point(self):
        # clusters of k identical points make each neighborhood centroid
        # coincide with the aligned scan point, so the residuals are all zero
        rng = np.random.default_rng(5)
        prm = MatchParams(assoc_radius=3.0)
        centers = rng.uniform(-30, 30, size=(50, 3))
        lmap = LocalMap()
        lmap.insert(np.repeat(centers, prm.k, axis=0))
        x = NavState.identity()
        x.pos = np.array([0.0, 0.0, 5.0])
        pts = (centers - x.pos) @ x.rot  # identity extrinsics
        covs = np.tile(1e-4 * np.eye(3), (50, 1, 1))
        P = np.eye(ins.DIM) * 1e-4
        x1, _, info = iterated_update(x, P, pts, covs, lmap, prm)
        assert info.matched >= prm.min_matches
        assert info.iterations == 1
        assert np.linalg.norm(x1.pos - x.pos) < 1e-9
        assert np.abs(x1.rot - x.rot).max() < 1e-9

    def test_linear_problem_matches_kalman_filter(self):
        # position-only offsets with identity rotations: a single iteration
        # must reproduce the textbook KF posterior
        rng = np.random.default_rng(6)
        lmap = LocalMap()
        map_pts = rng.normal(scale=5.0, size=(30, 3))
        lmap.insert(map_pts)
        x = NavState.identity()
        offset = np.array([0.3, -0.2, 0.1])
        x.pos = offset
        # radar points offset from the map; k=1 and point-to-point keeps the
        # association fixed through the single iteration
        pts = map_pts - offset - offset  # p_world = pts + offset = map - offset
        prm = MatchParams(
            point_to_point=True,
            assoc_radius=1.0,
            epsilon=0.01,
            max_iterations=1,
            chi2_threshold=1e12,
            min_matches=1,
        )
        covs = np.tile(0.02 * np.eye(3), (30, 1, 1))
        P0 = np.diag(rng.uniform(0.05, 0.2, ins.DIM))
        x1, P1, info = iterated_update(x, P0, pts, covs, lmap, prm)
        assert info.matched == 30

        # textbook KF on the same stacked system (nearest map point per
        # scan point, same residual model and measurement covariances)
        m = 30
        H = np.zeros((3 * m, ins.DIM))
        Rbig = np.zeros((3 * m, 3 * m))
        z = np.zeros(3 * m)
        _, nn = lmap.knn(pts + offset, 1)
        for i in range(m):
            g = NeighborhoodGaussian(map_pts[nn[i, 0]], prm.epsilon * np.eye(3), 1)
            sl = slice(3 * i, 3 * i + 3)
            p_world = pts[i] + offset
            z[sl] = p_world - g.centroid
            Hrow = np.zeros((3, ins.DIM))
            Hrow[:, ins.TH] = -so3.skew(pts[i])
            Hrow[:, ins.POS] = np.eye(3)
            Hrow[:, ins.ETH] = -so3.skew(pts[i])
            Hrow[:, ins.EPOS] = np.eye(3)
            H[sl] = Hrow
            Rbig[sl, sl] = covs[i] + g.covariance
        S = H @ P0 @ H.T + Rbig
        K = P0 @ H.T @ np.linalg.inv(S)
        dx = -K @ z
        P_ref = (np.eye(ins.DIM) - K @ H) @ P0
        x_ref, _ = ins.inject_and_reset(x, P0, dx)
        np.testing.assert_allclose(x1.pos, x_ref.pos, atol=1e-9)
        np.testing.assert_allclose(x1.vel, x_ref.vel, atol=1e-9)
        np.testing.assert_allclose(x1.rot, x_ref.rot, atol=1e-9)
        np.testing.assert_allclose(P1, (P_ref + P_ref.T) / 2, atol=1e-9)

    def test_recovers_half_meter_offset(self):
        from radarnav.sim import Scenario, generate_world

        rng = np.random.default_rng(7)
        world = generate_world(Scenario(seed=3, world="structured", buildings=8))
        lmap = LocalMap()
        lmap.insert(world)
        truth = NavState.identity()
        truth.pos = np.array([0.0, 0.0, 5.0])
        near = world[np.linalg.norm(world - truth.pos, axis=1) < 60.0]
        sample = near[rng.choice(len(near), size=250, replace=False)]
        pts = ((sample - truth.pos) @ truth.rot - truth.ext_pos) @ truth.ext_rot
        covs = np.tile(1e-4 * np.eye(3), (250, 1, 1))
        x = truth.copy()
        x.pos = truth.pos + np.array([0.5, 0.0, 0.0])
        P = np.diag(np.full(ins.DIM, 0.25))
        prm = MatchParams(assoc_radius=5.0, max_iterations=8)
        x1, _, info = iterated_update(x, P, pts, covs, lmap, prm, active=np.arange(15))
        assert info.matched >= prm.min_matches
        assert np.linalg.norm(x1.pos - truth.pos) < 0.05

    def test_no_matches_leaves_state(self):
        lmap = LocalMap()
        lmap.insert(np.array([[100.0, 100.0, 100.0]]))
        x = NavState.identity()
        P = np.eye(ins.DIM)
        pts = np.array([[1.0, 0.0, 0.0]])
        covs = np.tile(1e-4 * np.eye(3), (1, 1, 1))
        x1, P1, info = iterated_update(x, P, pts, covs, lmap, MatchParams())
        assert info.matched == 0
        np.testing.assert_array_equal(x1.pos, x.pos)
        np.testing.assert_array_equal(P1, P)

    def test_frozen_extrinsics_do_not_move(self):
        rng = np.random.default_rng(8)
        lmap = dense_grid_map(jitter=0.05, seed=2)
        truth = NavState.identity()
        truth.pos = np.array([0.0, 0.0, 4.0])
        pts = self.scan_from_map(lmap, truth, 80, rng)
        covs = np.tile(1e-4 * np.eye(3), (80, 1, 1))
        x = truth.copy()
        x.pos = truth.pos + np.array([0.2, -0.1, 0.05])
        P = np.eye(ins.DIM) * 0.04
        active = np.arange(15)
        x1, P1, _ = iterated_update(x, P, pts, covs, lmap, MatchParams(assoc_radius=3.0), active=active)
        np.testing.assert_array_equal(x1.ext_rot, x.ext_rot)
        np.testing.assert_array_equal(x1.ext_pos, x.ext_pos)
        np.testing.assert_array_equal(P1[15:, 15:], P[15:, 15:])


class TestAugmentMap:
    def test_world_transform(self):
        lmap = LocalMap()
        x = NavState.identity()
        x.pos = np.array([10.0, 0.0, 0.0])
        x.rot = so3.exp_so3([0.0, 0.0, np.pi / 2])
        x.ext_pos = np.array([1.0, 0.0, 0.0])
        pts = np.array([[2.0, 0.0, 0.0]])
        inserted, _ = matching.augment_map(lmap, pts, x)
        assert inserted == 1
        # radar point (2,0,0) -> body (3,0,0) -> world rotates onto +y
        np.testing.assert_allclose(lmap.points[0], [10.0, 3.0, 0.0], atol=1e-12)

    def test_empty_scan(self):
        lmap = LocalMap()
        inserted, _ = matching.augment_map(lmap, np.empty((0, 3)), NavState.identity())
        assert inserted == 0
