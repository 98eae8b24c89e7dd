"""Local collision avoidance behind a sensor-level policy interface.

The policy contract is deliberately narrow: a 2D scan, the goal in the robot
frame, and the current command in; a velocity command out. Nothing else
crosses the boundary, so a learned policy can be dropped in by name. The
default implementation groups scan beams into obstacle arcs, fits a disc to
each, treats the discs as full-responsibility velocity obstacles, and takes
the admissible velocity nearest the goal-pursuit velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Pose, normalize_angle, vec2
from .frvo import FrvoParams, FrvoRegion, VelocityObstacle, select_best_velocity
from .planner import OccupancyGrid


@dataclass
class NavParams:
    v_max: float = 1.0
    omega_max: float = 1.5
    robot_radius: float = 0.35
    beams: int = 360
    max_range: float = 10.0
    horizon: float = 0.8          # static-obstacle look-ahead; short so that
                                  # fleeing past distant obstacles stays
                                  # admissible under 10 Hz re-planning
    moving_horizon: float = 1.6   # look-ahead for clusters with a velocity
                                  # estimate (they chase, so react earlier)
    cluster_jump: float = 0.5     # range discontinuity that splits an arc
    cluster_max_arc: float = 20.0  # degrees; wider surfaces split into discs
    safety_margin: float = 0.1    # obstacle inflation beyond the footprint
    slow_radius: float = 1.0      # start decelerating this close to the goal
    brake_range: float = 0.55     # surrounded below this range means boxed in
    retreat_near: float = 0.55    # full retreat priority below this clearance
    retreat_far: float = 1.3      # goal pursuit resumes beyond this clearance
    retreat_slide: float = 0.7    # tangential mix pulling retreats around obstacles
    turn_gain: float = 4.0        # angular command per radian of misalignment
    scan_dt: float = 0.1          # seconds between scans (for motion estimates)
    match_radius: float = 0.7     # cluster association gate across frames
    vel_smooth: float = 0.5       # EMA weight on previous cluster velocity
    vel_cap: float = 1.5          # obstacle speed estimates clip here, m/s


@dataclass
class Scan2D:
    """Fixed-length 360-degree range scan; beam k points at angle
    2*pi*k/len(ranges) in the robot frame."""

    ranges: np.ndarray
    max_range: float

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float)

    def angles(self) -> np.ndarray:
        n = len(self.ranges)
        return np.arange(n) * (2 * math.pi / n)


@dataclass
class VelocityCommand:
    linear: float = 0.0
    angular: float = 0.0


@dataclass
class PolicyInput:
    scan: Scan2D
    goal: np.ndarray              # robot frame
    current_velocity: VelocityCommand = field(default_factory=VelocityCommand)

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        if not np.isfinite(self.goal).all():
            raise ValueError("goal must be finite")


def world_to_scan(robot_pose: Pose, grid: OccupancyGrid | None, pedestrians,
                  params: NavParams | None = None) -> Scan2D:
    """Simulated lidar over the true world: nearest occupied cell or
    pedestrian disc per beam, capped at max_range.

    Grid marching runs at half the grid resolution, so a reported range can
    overshoot the true surface by at most one resolution.
    """
    params = params or NavParams()
    n = params.beams
    angles = robot_pose.heading + np.arange(n) * (2 * math.pi / n)
    if grid is not None:
        cells = grid.cells
        ox, oy = float(grid.origin[0]), float(grid.origin[1])
        res = grid.resolution
        use_grid = True
    else:
        cells = np.zeros((1, 1), dtype=np.int8)
        ox = oy = 0.0
        res = 0.05
        use_grid = False
    peds = list(pedestrians)
    ped_xy = np.zeros((max(len(peds), 1), 2))
    ped_r = np.zeros(max(len(peds), 1))
    for i, p in enumerate(peds):
        ped_xy[i] = p.x
        ped_r[i] = p.radius
    ranges = _kernels.raycast(
        float(robot_pose.x), float(robot_pose.y), angles,
        cells, ox, oy, res, use_grid,
        ped_xy, ped_r, len(peds), params.max_range, (res if use_grid else 0.05) * 0.5,
    )
    return Scan2D(ranges=ranges, max_range=params.max_range)


def scan_clusters(scan: Scan2D, params: NavParams | None = None):
    """Obstacle arcs fitted as discs: (centers (K, 2), radii (K,)), scan frame."""
    params = params or NavParams()
    n = len(scan.ranges)
    out = np.empty((n, 3))
    k = _kernels.cluster_discs(scan.ranges, 0.0, 2 * math.pi / n,
                               scan.max_range, params.cluster_jump, out,
                               params.cluster_max_arc)
    return out[:k, :2].copy(), out[:k, 2].copy()


def scan_obstacles(scan: Scan2D, params: NavParams | None = None,
                   velocities=None) -> FrvoRegion:
    """Velocity-obstacle region built from the scan's cluster discs.

    Obstacles do not reciprocate, so each cone takes the full avoidance
    responsibility: with the region's shared u = 2(v - apex) membership
    convention, apex = obstacle velocity and half the look-ahead horizon
    test the true relative velocity over the full horizon. ``velocities``
    (one per cluster, robot frame) default to zero for a static world.
    """
    params = params or NavParams()
    centers, radii = scan_clusters(scan, params)
    obstacles = []
    for i in range(len(radii)):
        center = centers[i]
        apex = vec2(0, 0) if velocities is None else np.asarray(velocities[i], dtype=float)
        moving = float(apex @ apex) > 0.15**2
        tau = (params.moving_horizon if moving else params.horizon) / 2
        contact = radii[i] + params.robot_radius
        radius = contact + params.safety_margin
        d = float(np.linalg.norm(center))
        if d <= contact:
            # True footprint contact: forbid everything that closes further.
            direction = center / d if d > 0 else vec2(1.0, 0.0)
            obstacles.append(VelocityObstacle(
                apex=apex, left_dir=vec2(-direction[1], direction[0]),
                right_dir=vec2(direction[1], -direction[0]), horizon=tau,
                rel_pos=vec2(*center), combined_radius=radius, degenerate=True))
            continue
        # Inside the safety margin the cone widens toward (not onto) the
        # half-plane, keeping tangential escape routes open.
        radius = min(radius, 0.98 * d)
        theta = math.atan2(center[1], center[0])
        alpha = math.asin(min(1.0, radius / d))
        obstacles.append(VelocityObstacle(
            apex=apex,
            left_dir=vec2(math.cos(theta + alpha), math.sin(theta + alpha)),
            right_dir=vec2(math.cos(theta - alpha), math.sin(theta - alpha)),
            horizon=tau, rel_pos=vec2(*center), combined_radius=radius))
    return FrvoRegion(obstacles)


def reactive_vo_velocity(policy_input: PolicyInput,
                         params: NavParams | None = None,
                         velocities=None, region: FrvoRegion | None = None):
    """Admissible robot-frame velocity nearest the reference velocity.

    The reference is the goal-pursuit velocity, blended toward an
    away-from-the-nearest-obstacle direction as clearance shrinks; the
    retreat bias is what makes the robot yield ground instead of idling on
    an obstacle boundary. The retreat direction gets a tangential pull
    toward the goal side so the robot slides around obstacles rather than
    bouncing straight back. Returns (velocity, blocked, region); the region
    is exposed so callers can verify the choice against the membership test.
    """
    params = params or NavParams()
    goal = policy_input.goal
    dist = float(np.linalg.norm(goal))
    if region is None:
        region = scan_obstacles(policy_input.scan, params, velocities)
    if dist < 1e-9:
        return vec2(0, 0), False, region
    goal_dir = goal / dist
    w = _goal_weight(policy_input.scan, params)
    if w < 1.0:
        retreat = _retreat_direction(policy_input.scan, goal_dir, params)
        direction = w * goal_dir + (1.0 - w) * retreat
        norm = float(np.linalg.norm(direction))
        direction = direction / norm if norm > 1e-9 else retreat
        speed = max(params.v_max * min(1.0, dist / params.slow_radius),
                    (1.0 - w) * params.v_max)
    else:
        direction = goal_dir
        speed = params.v_max * min(1.0, dist / params.slow_radius)
    v_pref = direction * speed
    frvo_params = FrvoParams(horizon=params.horizon / 2, v_max=params.v_max)
    v, blocked = select_best_velocity(v_pref, region, params.v_max, frvo_params)
    return v, blocked, region


def _goal_weight(scan: Scan2D, params: NavParams) -> float:
    """1 = pursue the goal; 0 = full retreat priority."""
    clearance = float(scan.ranges.min()) - params.robot_radius
    span = max(params.retreat_far - params.retreat_near, 1e-9)
    return min(1.0, max(0.0, (clearance - params.retreat_near) / span))


def _retreat_direction(scan: Scan2D, goal_dir, params: NavParams) -> np.ndarray:
    """Away from the nearest return, pulled tangentially toward the goal side."""
    k_min = int(np.argmin(scan.ranges))
    beta = 2 * math.pi * k_min / len(scan.ranges)
    away = vec2(-math.cos(beta), -math.sin(beta))
    tangent = vec2(-away[1], away[0])
    if float(goal_dir @ tangent) < 0:
        tangent = -tangent
    retreat = away + params.retreat_slide * tangent
    return retreat / float(np.linalg.norm(retreat))


def _to_command(policy_input: PolicyInput, params: NavParams, v, blocked):
    """Turn a selected planar velocity into a bounded unicycle command.

    The unicycle may reverse: when the chosen velocity points into the rear
    half-plane the command backs up while steering the tail toward it,
    which is what lets the robot yield to pedestrians walking at it.
    """
    speed = 0.0 if blocked else float(np.linalg.norm(v))
    if speed < 1e-9:
        ranges = policy_input.scan.ranges
        if float(ranges.max()) < params.brake_range:
            # boxed in on every side: standing still is all that is feasible
            return VelocityCommand(0.0, 0.0), True
        # Stalled or fully constrained with pressure nearby: the membership
        # test offers nothing, so yield ground along the retreat direction
        # (least-harm motion under 10 Hz re-planning).
        goal = policy_input.goal
        goal_dir = goal / float(np.linalg.norm(goal))
        v = _retreat_direction(policy_input.scan, goal_dir, params) * 0.6 * params.v_max
        speed = float(np.linalg.norm(v))
    delta = normalize_angle(math.atan2(v[1], v[0]))
    if abs(delta) <= math.pi / 2:
        steer = delta
        linear = speed * math.cos(delta)
    else:
        steer = normalize_angle(delta - math.pi)
        linear = -speed * math.cos(steer)
    angular = max(-params.omega_max, min(params.omega_max, params.turn_gain * steer))
    linear = max(-params.v_max, min(params.v_max, linear))
    return VelocityCommand(linear=linear, angular=angular), False


def policy_step(policy_input: PolicyInput,
                params: NavParams | None = None) -> tuple[VelocityCommand, bool]:
    """Single-scan reactive policy: velocity-obstacle selection with retreat
    bias, converted to a bounded unicycle command. Stateless; obstacles are
    treated as static."""
    params = params or NavParams()
    if float(np.linalg.norm(policy_input.goal)) < 1e-9:
        return VelocityCommand(0.0, 0.0), False
    v, blocked, _ = reactive_vo_velocity(policy_input, params)
    return _to_command(policy_input, params, v, blocked)


class ReactiveVoPolicy:
    """Default policy: policy_step plus cross-frame obstacle motion.

    Cluster discs from consecutive scans are matched by nearest center;
    their displacement gives each obstacle a velocity estimate, so cones
    lead moving pedestrians the way the learned counterpart infers motion
    from stacked scans. State is internal; the interface stays
    (scan, goal, current command) -> command.
    """

    def __init__(self, params: NavParams | None = None):
        self.params = params
        self._centers = None
        self._vels = None

    def reset(self):
        self._centers = None
        self._vels = None

    def _estimate_velocities(self, centers, params):
        k = len(centers)
        vels = np.zeros((k, 2))
        if self._centers is not None and len(self._centers) and k:
            prev = self._centers
            for i in range(k):
                d = np.linalg.norm(prev - centers[i], axis=1)
                j = int(np.argmin(d))
                if d[j] <= params.match_radius:
                    raw = (centers[i] - prev[j]) / params.scan_dt
                    vels[i] = params.vel_smooth * self._vels[j] + (1 - params.vel_smooth) * raw
        speeds = np.linalg.norm(vels, axis=1)
        fast = speeds > params.vel_cap
        if fast.any():
            vels[fast] *= (params.vel_cap / speeds[fast])[:, None]
        return vels

    def __call__(self, policy_input: PolicyInput,
                 params: NavParams | None = None) -> tuple[VelocityCommand, bool]:
        params = params or self.params or NavParams()
        centers, radii = scan_clusters(policy_input.scan, params)
        vels = self._estimate_velocities(centers, params)
        self._centers = centers
        self._vels = vels
        if float(np.linalg.norm(policy_input.goal)) < 1e-9:
            return VelocityCommand(0.0, 0.0), False
        region = scan_obstacles(policy_input.scan, params, velocities=vels)
        v, blocked, _ = reactive_vo_velocity(policy_input, params, region=region)
        return _to_command(policy_input, params, v, blocked)


def goal_reached(robot_pose: Pose, goal, tol: float) -> bool:
    """Planar arrival test with a closed boundary (distance == tol counts)."""
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    goal = np.asarray(goal, dtype=float)
    return float(np.linalg.norm(goal - robot_pose.position)) <= tol


def apply_command(pose: Pose, cmd: VelocityCommand, dt: float) -> Pose:
    """Unicycle integration: rotate, then translate along the new heading."""
    heading = normalize_angle(pose.heading + cmd.angular * dt)
    return Pose(
        x=pose.x + cmd.linear * dt * math.cos(heading),
        y=pose.y + cmd.linear * dt * math.sin(heading),
        heading=heading,
    )


POLICIES = {"reactive_vo": ReactiveVoPolicy}


def get_policy(name: str):
    """Policy factory by name; call the result to build a per-run instance."""
    try:
        return POLICIES[name]
    except KeyError:
        raise KeyError(f"unknown policy {name!r}; available: {sorted(POLICIES)}") from None
