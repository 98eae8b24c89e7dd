"""Simulated sensing: 4-camera detection rig, range scans, RANSAC fusion.

Synthesizes what the robot's perception stack would produce from ground
truth: visibility with occlusion, noisy bounding boxes, appearance features
(fixed per-pedestrian unit vectors plus noise, standing in for a learned
embedding), per-pedestrian depth returns with outliers, and a robust range
estimate fused with the coarse visual one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BBox, PedestrianState, Pose, normalize_angle, point_segment_distance, vec2

NOMINAL_PED_HEIGHT = 1.7  # meters; sets bbox aspect ratio


@dataclass
class CameraRig:
    """Four cameras mounted evenly around the robot, 80 deg horizontal FOV each.

    Adjacent cameras leave 10 deg blind wedges; together they cover 320 deg.
    """

    num_cameras: int = 4
    fov_deg: float = 80.0
    mount_yaws_deg: tuple = (0.0, 90.0, 180.0, 270.0)
    max_range: float = 10.0

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    def camera_for_bearing(self, rel_bearing: float) -> int | None:
        """Camera whose wedge contains the robot-frame bearing, else None."""
        for cam, yaw_deg in enumerate(self.mount_yaws_deg):
            off = normalize_angle(rel_bearing - math.radians(yaw_deg))
            if abs(off) <= self.fov / 2:
                return cam
        return None


@dataclass
class SensorParams:
    """Noise and fusion tunables; all scenario-overridable."""

    sigma_px: float = 0.01        # bbox center/size noise (normalized units)
    sigma_f: float = 0.05         # appearance noise (total perturbation norm)
    p_miss: float = 0.05          # missed-detection probability
    sigma_r: float = 0.05         # depth return noise, meters
    outlier_rate: float = 0.1     # fraction of junk depth returns
    scan_points: int = 20         # depth returns per pedestrian
    ransac_delta: float = 0.2     # inlier band half-width, meters
    min_inliers: int = 5          # below this the range estimate is distrusted
    max_gap: float = 2.0          # visual/range disagreement tolerance, meters
    occlusion_clearance: float = 0.3  # ray-to-body clearance, meters
    feature_dim: int = 32
    bbox_height_gain: float = 0.55  # normalized bbox height at 1 m range


@dataclass
class Detection:
    """One synthesized pedestrian detection.

    ``truth_id`` identifies the generating pedestrian; it is carried for
    evaluation only and must not inform tracking decisions. ``lidar_range``
    and ``lidar_inliers`` are filled when a range scan was processed.
    """

    bbox: BBox
    feature: np.ndarray
    visual_range: float
    truth_id: int
    lidar_range: float | None = None
    lidar_inliers: int = 0


@dataclass
class RangeScan:
    """Depth returns attributed to one pedestrian's bbox frustum."""

    bearings: np.ndarray
    depths: np.ndarray

    def __len__(self):
        return len(self.depths)


def identity_feature(streams, ped_id: int, dim: int = 32) -> np.ndarray:
    """Deterministic unit appearance vector for a pedestrian id."""
    g = streams.stream("identity", ped_id).normal(size=dim)
    return g / np.linalg.norm(g)


def visible_pedestrians(robot_pose: Pose, world, rig: CameraRig,
                        clearance: float = 0.3):
    """Pedestrians seen by some camera: in a FOV wedge, in range, unoccluded.

    A pedestrian is occluded when the sight ray passes within ``clearance``
    of a strictly nearer pedestrian's footprint disc.
    """
    origin = robot_pose.position
    ranged = []
    for p in world:
        d = p.x - origin
        rng = float(np.linalg.norm(d))
        ranged.append((p, rng))
    out = []
    for p, rng in ranged:
        if rng == 0.0 or rng > rig.max_range:
            continue
        bearing = math.atan2(p.x[1] - origin[1], p.x[0] - origin[0])
        cam = rig.camera_for_bearing(normalize_angle(bearing - robot_pose.heading))
        if cam is None:
            continue
        occluded = False
        for q, q_rng in ranged:
            if q.id == p.id or q_rng >= rng:
                continue
            if point_segment_distance(q.x, origin, p.x) < q.radius + clearance:
                occluded = True
                break
        if not occluded:
            out.append((p, cam))
    return out


def project_bbox(p: PedestrianState, robot_pose: Pose, rig: CameraRig,
                 params: SensorParams | None = None) -> tuple[int, BBox] | None:
    """Noiseless pinhole projection of a pedestrian into its camera.

    Returns None when the bearing falls in a blind wedge or out of range.
    """
    params = params or SensorParams()
    origin = robot_pose.position
    d = p.x - origin
    rng = float(np.linalg.norm(d))
    if rng == 0.0 or rng > rig.max_range:
        return None
    rel = normalize_angle(math.atan2(d[1], d[0]) - robot_pose.heading)
    cam = rig.camera_for_bearing(rel)
    if cam is None:
        return None
    off = normalize_angle(rel - math.radians(rig.mount_yaws_deg[cam]))
    cx = 0.5 + off / rig.fov
    height = params.bbox_height_gain / rng
    width = height * (p.l / NOMINAL_PED_HEIGHT)
    return cam, BBox(cx=cx, cy=0.5, width=width, height=height, camera_id=cam)


def bbox_bearing(bbox: BBox, rig: CameraRig) -> float:
    """Robot-frame bearing encoded by a bbox center."""
    yaw = math.radians(rig.mount_yaws_deg[bbox.camera_id])
    return normalize_angle(yaw + (bbox.cx - 0.5) * rig.fov)


def synth_detection(p: PedestrianState, camera_id: int, rng: np.random.Generator,
                    identity: np.ndarray, robot_pose: Pose, rig: CameraRig,
                    params: SensorParams) -> Detection | None:
    """Noisy detection for a visible pedestrian; None models a missed detection.

    The appearance feature is the pedestrian's identity vector perturbed by
    Gaussian noise of total standard deviation sigma_f, renormalized.
    """
    if params.p_miss > 0 and rng.random() < params.p_miss:
        return None
    projected = project_bbox(p, robot_pose, rig, params)
    if projected is None or projected[0] != camera_id:
        raise ValueError("pedestrian not visible via the stated camera")
    _, box = projected
    cx = box.cx + (rng.normal(0, params.sigma_px) if params.sigma_px > 0 else 0.0)
    cy = box.cy + (rng.normal(0, params.sigma_px) if params.sigma_px > 0 else 0.0)
    height = box.height + (rng.normal(0, params.sigma_px) if params.sigma_px > 0 else 0.0)
    height = max(height, 1e-3)
    width = max(box.width + (rng.normal(0, params.sigma_px) if params.sigma_px > 0 else 0.0), 1e-3)
    noisy = BBox(cx=cx, cy=cy, width=width, height=height, camera_id=camera_id)
    feature = identity.copy()
    if params.sigma_f > 0:
        feature = feature + rng.normal(0, params.sigma_f / math.sqrt(len(identity)), size=len(identity))
    feature = feature / np.linalg.norm(feature)
    visual_range = params.bbox_height_gain / height
    return Detection(bbox=noisy, feature=feature, visual_range=visual_range, truth_id=p.id)


def simulate_range_scan(p: PedestrianState, robot_pose: Pose, rng: np.random.Generator,
                        params: SensorParams, rig: CameraRig) -> RangeScan:
    """Depth returns for one visible pedestrian: Gaussian around the true
    range plus uniform outliers at the configured rate."""
    d = p.x - robot_pose.position
    true_range = float(np.linalg.norm(d))
    bearing = math.atan2(d[1], d[0])
    half_extent = math.asin(min(1.0, p.radius / max(true_range, p.radius)))
    k = params.scan_points
    bearings = bearing + (rng.uniform(-half_extent, half_extent, size=k) if half_extent > 0 else np.zeros(k))
    outlier = rng.random(k) < params.outlier_rate if params.outlier_rate > 0 else np.zeros(k, bool)
    noise = rng.normal(0, params.sigma_r, size=k) if params.sigma_r > 0 else np.zeros(k)
    depths = np.where(outlier, rng.uniform(0, rig.max_range, size=k), true_range + noise)
    depths = np.maximum(depths, 1e-3)
    return RangeScan(bearings=bearings, depths=depths)


def ransac_range(scan: RangeScan, delta: float = 0.2) -> tuple[float, int]:
    """Robust 1D range estimate: constant-depth consensus with band +-delta.

    Every return serves as a hypothesis (exhaustive, hence deterministic);
    the winner is refined as the mean of its inliers. Ties keep the earliest
    hypothesis.
    """
    if len(scan) == 0:
        raise ValueError("cannot estimate range from an empty scan")
    depths = np.asarray(scan.depths, dtype=float)
    inlier = np.abs(depths[:, None] - depths[None, :]) <= delta
    counts = inlier.sum(axis=1)
    best = int(np.argmax(counts))
    mask = inlier[best]
    return float(depths[mask].mean()), int(counts[best])


def fuse_range(visual_range: float, lidar_range: float | None, inlier_count: int,
               params: SensorParams | None = None) -> float:
    """Trust the range sensor unless it is absent, weakly supported, or
    grossly inconsistent with the visual estimate; then fall back to vision."""
    params = params or SensorParams()
    if not visual_range > 0:
        raise ValueError("visual range must be positive")
    if lidar_range is None:
        return visual_range
    if inlier_count < params.min_inliers:
        return visual_range
    if abs(lidar_range - visual_range) > params.max_gap:
        return visual_range
    return lidar_range


def sense_world(world, robot_pose: Pose, streams, tick: int,
                rig: CameraRig, params: SensorParams,
                identities: dict) -> list[Detection]:
    """Full per-tick sensing pass: visibility, detection synthesis, range scan.

    Draws come from per-(tick, pedestrian) RNG streams, so the sequence seen
    for one pedestrian never depends on which others are visible.
    """
    detections = []
    visible = visible_pedestrians(robot_pose, world, rig, params.occlusion_clearance)
    for p, cam in sorted(visible, key=lambda pc: pc[0].id):
        rng = streams.stream("sensing", tick, p.id)
        det = synth_detection(p, cam, rng, identities[p.id], robot_pose, rig, params)
        if det is None:
            continue
        scan = simulate_range_scan(p, robot_pose, rng, params, rig)
        if len(scan):
            est, inliers = ransac_range(scan, params.ransac_delta)
            det.lidar_range = est
            det.lidar_inliers = inliers
        detections.append(det)
    return detections
