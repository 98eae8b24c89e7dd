import math

import numpy as np
import pytest

from patrolsim.core import PedestrianState, Pose, RngStreams, vec2
from patrolsim.sensing import (
    CameraRig,
    RangeScan,
    SensorParams,
    bbox_bearing,
    fuse_range,
    identity_feature,
    project_bbox,
    ransac_range,
    sense_world,
    simulate_range_scan,
    synth_detection,
    visible_pedestrians,
)

NOISELESS = SensorParams(sigma_px=0.0, sigma_f=0.0, p_miss=0.0, sigma_r=0.0, outlier_rate=0.0)


def ped(pid, x, y, l=0.45, w=0.25):
    return PedestrianState(pid, vec2(x, y), vec2(0, 0), vec2(0, 0), l=l, w=w)


def oracle_best_consensus(depths, delta):
    """Independent enumeration: best (count, -index) over all hypotheses."""
    best_count, best_idx = -1, -1
    for i, h in enumerate(depths):
        count = sum(1 for d in depths if abs(d - h) <= delta)
        if count > best_count:
            best_count, best_idx = count, i
    mask = [abs(d - depths[best_idx]) <= delta for d in depths]
    mean = sum(d for d, m in zip(depths, mask) if m) / best_count
    return mean, best_count


class TestVisibility:
    def test_in_fov_wedge(self):
        rig = CameraRig()
        robot = Pose(0, 0, 0)
        # 30 deg sits in camera 0's wedge, 60 deg in camera 1's.
        for bearing, cam in ((math.radians(30), 0), (math.radians(60), 1)):
            p = ped(0, 3 * math.cos(bearing), 3 * math.sin(bearing))
            got = visible_pedestrians(robot, [p], rig)
            assert got == [(p, cam)]

    def test_blind_wedge_not_visible(self):
        # 45 deg is dead center of the 10 deg gap between cameras 0 and 1.
        rig = CameraRig()
        p = ped(0, 3 * math.cos(math.radians(45)), 3 * math.sin(math.radians(45)))
        assert visible_pedestrians(Pose(0, 0, 0), [p], rig) == []
        # wedge boundaries: 40 deg inclusive-visible, 41 deg blind
        for deg, expect in ((40.0, True), (41.0, False), (49.0, False), (50.0, True)):
            q = ped(1, 3 * math.cos(math.radians(deg)), 3 * math.sin(math.radians(deg)))
            assert bool(visible_pedestrians(Pose(0, 0, 0), [q], rig)) is expect, deg

    def test_occlusion_same_ray(self):
        rig = CameraRig()
        near = ped(0, 2.0, 0.0)
        far = ped(1, 4.0, 0.0)
        got = visible_pedestrians(Pose(0, 0, 0), [near, far], rig)
        assert [(p.id, cam) for p, cam in got] == [(0, 0)]

    def test_out_of_range(self):
        rig = CameraRig(max_range=10.0)
        assert visible_pedestrians(Pose(0, 0, 0), [ped(0, 11.0, 0.0)], rig) == []

    def test_heading_rotates_wedges(self):
        rig = CameraRig()
        p = ped(0, 0.0, 3.0)  # world bearing 90 deg
        assert visible_pedestrians(Pose(0, 0, math.pi / 2), [p], rig)[0][1] == 0

    def test_monotone_under_occluder_removal(self):
        rig = CameraRig()
        rng = np.random.default_rng(21)
        robot = Pose(0, 0, 0)
        for _ in range(50):
            world = [ped(i, *rng.uniform(-8, 8, 2)) for i in range(8)]
            base = {p.id for p, _ in visible_pedestrians(robot, world, rig)}
            drop = int(rng.integers(0, 8))
            reduced = [p for p in world if p.id != drop]
            after = {p.id for p, _ in visible_pedestrians(robot, reduced, rig)}
            assert (base - {drop}) <= after


class TestSynthDetection:
    def test_noiseless_exact_projection(self):
        rig = CameraRig()
        streams = RngStreams(3)
        identity = identity_feature(streams, 0)
        p = ped(0, 4.0, 0.0)
        robot = Pose(0, 0, 0)
        det = synth_detection(p, 0, streams.stream("sensing", 0, 0), identity, robot, rig, NOISELESS)
        assert det is not None
        cam, exact = project_bbox(p, robot, rig, NOISELESS)
        assert det.bbox.cx == pytest.approx(exact.cx) == pytest.approx(0.5)
        assert det.bbox.height == pytest.approx(exact.height)
        np.testing.assert_array_equal(det.feature, identity)
        assert det.visual_range == pytest.approx(4.0)

    def test_range_doubling_halves_height(self):
        rig = CameraRig()
        streams = RngStreams(3)
        identity = identity_feature(streams, 0)
        robot = Pose(0, 0, 0)
        rng = streams.stream("sensing", 0, 0)
        h1 = synth_detection(ped(0, 3.0, 0), 0, rng, identity, robot, rig, NOISELESS).bbox.height
        h2 = synth_detection(ped(0, 6.0, 0), 0, rng, identity, robot, rig, NOISELESS).bbox.height
        assert h1 == pytest.approx(2 * h2)

    def test_feature_noise_small_cosine_distance(self):
        # Monte-Carlo oracle: mean cosine distance between two noisy copies
        # of one identity, sigma_f = 0.05.
        streams = RngStreams(4)
        identity = identity_feature(streams, 7)
        params = SensorParams(sigma_px=0.0, p_miss=0.0, sigma_f=0.05)
        rng = streams.stream("mc")
        dim = len(identity)
        dists = []
        for _ in range(10_000):
            f1 = identity + rng.normal(0, params.sigma_f / math.sqrt(dim), dim)
            f2 = identity + rng.normal(0, params.sigma_f / math.sqrt(dim), dim)
            f1 /= np.linalg.norm(f1)
            f2 /= np.linalg.norm(f2)
            dists.append(1.0 - float(f1 @ f2))
        assert np.mean(dists) < 0.02

    def test_miss_probability(self):
        rig = CameraRig()
        streams = RngStreams(5)
        identity = identity_feature(streams, 0)
        params = SensorParams(sigma_px=0.0, sigma_f=0.0, p_miss=0.3, sigma_r=0.0, outlier_rate=0.0)
        p = ped(0, 3.0, 0.0)
        robot = Pose(0, 0, 0)
        misses = sum(
            synth_detection(p, 0, streams.stream("sensing", t, 0), identity, robot, rig, params) is None
            for t in range(2000)
        )
        assert misses == pytest.approx(600, abs=80)

    def test_identity_features_deterministic_unit(self):
        a = identity_feature(RngStreams(9), 3)
        b = identity_feature(RngStreams(9), 3)
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)


class TestRangeScan:
    def test_noiseless_depths_equal_true_range(self):
        streams = RngStreams(6)
        scan = simulate_range_scan(ped(0, 3.0, 4.0), Pose(0, 0, 0),
                                   streams.stream("sensing", 0, 0), NOISELESS, CameraRig())
        np.testing.assert_allclose(scan.depths, 5.0)
        assert len(scan) == NOISELESS.scan_points

    def test_outlier_rate_mean(self):
        streams = RngStreams(7)
        params = SensorParams(sigma_r=0.0, outlier_rate=0.3, scan_points=20)
        total = 0
        trials = 500
        for t in range(trials):
            scan = simulate_range_scan(ped(0, 5.0, 0.0), Pose(0, 0, 0),
                                       streams.stream("sensing", t, 0), params, CameraRig())
            total += int((scan.depths != 5.0).sum())
        assert total / trials == pytest.approx(6.0, abs=0.5)

    def test_occluded_pedestrian_produces_no_detection(self):
        streams = RngStreams(8)
        rig = CameraRig()
        world = [ped(0, 2.0, 0.0), ped(1, 4.0, 0.0)]
        identities = {p.id: identity_feature(streams, p.id) for p in world}
        dets = sense_world(world, Pose(0, 0, 0), streams, 0, rig, NOISELESS, identities)
        assert [d.truth_id for d in dets] == [0]


class TestRansac:
    def test_outlier_rejection_matches_enumeration_oracle(self):
        depths = np.array([5.0] * 15 + [1.3, 7.7, 0.4, 9.1, 2.6])
        scan = RangeScan(bearings=np.zeros(len(depths)), depths=depths)
        est, inliers = ransac_range(scan, delta=0.2)
        assert est == pytest.approx(5.0)
        assert inliers >= 15
        oracle_mean, oracle_count = oracle_best_consensus(list(depths), 0.2)
        assert est == pytest.approx(oracle_mean)
        assert inliers == oracle_count

    def test_random_scans_match_oracle(self):
        rng = np.random.default_rng(22)
        for _ in range(200):
            depths = np.concatenate([
                rng.normal(rng.uniform(1, 8), 0.05, size=rng.integers(5, 15)),
                rng.uniform(0, 10, size=rng.integers(0, 8)),
            ])
            scan = RangeScan(bearings=np.zeros(len(depths)), depths=depths)
            est, count = ransac_range(scan, delta=0.2)
            oracle_mean, oracle_count = oracle_best_consensus(list(depths), 0.2)
            assert count == oracle_count
            assert est == pytest.approx(oracle_mean)

    def test_unanimous(self):
        scan = RangeScan(bearings=np.zeros(4), depths=np.full(4, 3.3))
        assert ransac_range(scan, 0.2) == (pytest.approx(3.3), 4)

    def test_single_point(self):
        scan = RangeScan(bearings=np.zeros(1), depths=np.array([4.4]))
        assert ransac_range(scan, 0.2) == (pytest.approx(4.4), 1)

    def test_empty_scan_rejected(self):
        with pytest.raises(ValueError):
            ransac_range(RangeScan(bearings=np.zeros(0), depths=np.zeros(0)))

    def test_breakdown_property(self):
        # q <= 0.4, K >= 20: estimate within 2*delta of truth in >= 99% of trials.
        params = SensorParams(sigma_r=0.05, outlier_rate=0.4, scan_points=20)
        streams = RngStreams(23)
        rig = CameraRig()
        good = 0
        trials = 10_000
        for t in range(trials):
            scan = simulate_range_scan(ped(0, 5.0, 0.0), Pose(0, 0, 0),
                                       streams.stream("sensing", t, 0), params, rig)
            est, _ = ransac_range(scan, params.ransac_delta)
            good += abs(est - 5.0) <= 2 * params.ransac_delta
        assert good / trials >= 0.99


class TestFuseRange:
    def test_consistent_trusts_lidar(self):
        assert fuse_range(5.2, 5.0, 15) == 5.0

    def test_large_inconsistency_trusts_visual(self):
        # Occluding body between sensor and target: lidar reads 1.0, vision 5.2.
        assert fuse_range(5.2, 1.0, 15) == 5.2

    def test_absent_lidar_falls_back(self):
        assert fuse_range(5.2, None, 0) == 5.2

    def test_weak_support_falls_back(self):
        assert fuse_range(5.2, 5.0, 3) == 5.2

    def test_rejects_bad_visual(self):
        with pytest.raises(ValueError):
            fuse_range(0.0, 5.0, 10)


class TestNoiselessRoundTrip:
    def test_fused_range_equals_truth_for_every_visible_pedestrian(self):
        streams = RngStreams(24)
        rig = CameraRig()
        rng = np.random.default_rng(25)
        robot = Pose(0.5, -0.25, 0.3)
        world = [ped(i, *rng.uniform(-7, 7, 2)) for i in range(10)]
        identities = {p.id: identity_feature(streams, p.id) for p in world}
        dets = sense_world(world, robot, streams, 0, rig, NOISELESS, identities)
        truth = {p.id: p for p in world}
        assert dets, "expected at least one visible pedestrian"
        for det in dets:
            fused = fuse_range(det.visual_range, det.lidar_range, det.lidar_inliers, NOISELESS)
            true_range = float(np.linalg.norm(truth[det.truth_id].x - robot.position))
            assert fused == pytest.approx(true_range, abs=1e-9)

    def test_bbox_bearing_round_trip(self):
        rig = CameraRig()
        robot = Pose(1.0, 2.0, 0.7)
        p = ped(0, 4.0, 5.0)
        projected = project_bbox(p, robot, rig)
        assert projected is not None
        _, box = projected
        bearing_world = robot.heading + bbox_bearing(box, rig)
        expected = math.atan2(p.x[1] - robot.y, p.x[0] - robot.x)
        assert bearing_world == pytest.approx(expected, abs=1e-12)
