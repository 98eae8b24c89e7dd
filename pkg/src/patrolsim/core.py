"""Shared domain types: simulation clock, 2D geometry, agent state, seeded RNG.

Everything downstream (crowd motion, sensing, tracking, planning, the engine)
builds on the value types defined here. All types are plain data; functions
are pure, so simulation state can be snapshotted and replayed freely.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

_U64 = (1 << 64) - 1


def vec2(x: float, y: float) -> np.ndarray:
    """2D vector as a float64 array of shape (2,)."""
    return np.array([float(x), float(y)])


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]; -pi maps to +pi."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    if -math.pi < theta <= math.pi:  # fast path, keeps in-range values exact
        return theta
    r = theta % TWO_PI
    if r > math.pi:
        r -= TWO_PI
    return r


@dataclass(frozen=True)
class SimClock:
    """Fixed-step simulation clock; elapsed time is ``tick * dt`` seconds."""

    tick: int = 0
    dt: float = 0.1

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def elapsed(self) -> float:
        return self.tick * self.dt


def advance(clock: SimClock) -> SimClock:
    """Return a clock advanced by exactly one tick."""
    return SimClock(clock.tick + 1, clock.dt)


@dataclass
class Pose:
    """Planar pose (position + heading) of the robot."""

    x: float
    y: float
    heading: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return vec2(self.x, self.y)


@dataclass
class PedestrianState:
    """Pedestrian agent state.

    Position, velocity and preferred velocity are world-frame 2D vectors in
    meters / meters-per-second. ``l`` and ``w`` are the shoulder-box length
    (side to side) and width (front to back); ``facing`` is the body heading
    in radians, normalized to (-pi, pi].
    """

    id: int
    x: np.ndarray
    v: np.ndarray
    v_pref: np.ndarray
    l: float = 0.45
    w: float = 0.25
    facing: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.v_pref = np.asarray(self.v_pref, dtype=float)
        if not (self.l > 0 and self.w > 0):
            raise ValueError("shoulder dimensions must be positive")
        self.facing = normalize_angle(float(self.facing))

    @property
    def radius(self) -> float:
        """Radius of the disc circumscribing the l x w shoulder box."""
        return 0.5 * math.hypot(self.l, self.w)


@dataclass
class BBox:
    """Axis-aligned box in a camera's normalized image plane ([0,1] x [0,1])."""

    cx: float
    cy: float
    width: float
    height: float
    camera_id: int

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise ValueError("bbox extents must be non-negative")


class RngStreams:
    """A seeded root generator forked into independent named streams.

    Each ``stream(name, *indices)`` call derives a generator whose sequence
    depends only on (seed, name, indices), so adding draws in one module
    never perturbs the sequences another module sees.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64

    def stream(self, name: str, *indices: int) -> np.random.Generator:
        key = zlib.crc32(name.encode("utf-8"))
        entropy = [self.seed, key] + [int(i) & _U64 for i in indices]
        return np.random.default_rng(np.random.SeedSequence(entropy))


# --- small geometry helpers shared by collision checks and sensing ---


def footprint_corners(p: PedestrianState) -> np.ndarray:
    """Corners (4,2) of the pedestrian's oriented shoulder box.

    The box spans l/2 laterally (across the shoulders) and w/2 fore-aft.
    """
    fwd = vec2(math.cos(p.facing), math.sin(p.facing))
    lat = vec2(-fwd[1], fwd[0])
    hw, hl = 0.5 * p.w, 0.5 * p.l
    return np.array([
        p.x + hw * fwd + hl * lat,
        p.x - hw * fwd + hl * lat,
        p.x - hw * fwd - hl * lat,
        p.x + hw * fwd - hl * lat,
    ])


def _project(corners: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    d = corners @ axis
    return d.min(), d.max()


def rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating axis test for two convex quads given as (4,2) corner arrays."""
    for corners in (a, b):
        for i in range(4):
            edge = corners[(i + 1) % 4] - corners[i]
            axis = vec2(-edge[1], edge[0])
            lo_a, hi_a = _project(a, axis)
            lo_b, hi_b = _project(b, axis)
            if hi_a <= lo_b or hi_b <= lo_a:
                return False
    return True


def disc_rect_overlap(center: np.ndarray, radius: float, corners: np.ndarray) -> bool:
    """Overlap test between a disc and an oriented rectangle (4,2) corners."""
    # Rectangle frame from its first two edges.
    u = corners[1] - corners[0]
    v = corners[3] - corners[0]
    lu, lv = np.linalg.norm(u), np.linalg.norm(v)
    u, v = u / lu, v / lv
    d = np.asarray(center, dtype=float) - corners[0]
    cu = min(max(float(d @ u), 0.0), lu)
    cv = min(max(float(d @ v), 0.0), lv)
    closest = corners[0] + cu * u + cv * v
    return float(np.linalg.norm(np.asarray(center) - closest)) < radius


def discs_overlap(c1: np.ndarray, r1: float, c2: np.ndarray, r2: float) -> bool:
    d = np.asarray(c1, dtype=float) - np.asarray(c2, dtype=float)
    return float(d @ d) < (r1 + r2) ** 2


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from point p to segment ab."""
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))
