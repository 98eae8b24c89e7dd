"""Frontal reciprocal velocity-obstacle crowd motion.

Each pedestrian considers only neighbors inside an interaction radius and in
the frontal half-plane of its facing direction. Every such neighbor induces
a truncated cone of forbidden velocities (collision within the horizon,
shifted by the reciprocity apex (v_i + v_j)/2); the union of cones is the
forbidden region, and the agent takes the feasible velocity closest to its
preferred velocity.

The union is non-convex, so the argmin is solved by deterministic sampling:
a polar grid anchored at the preferred-velocity direction, plus projections
of the preferred velocity onto every cone boundary. Anchoring the grid at
v_pref makes the whole selection equivariant under global rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import PedestrianState, normalize_angle, vec2


@dataclass
class FrvoParams:
    """Tunables for neighbor interaction and velocity sampling."""

    radius: float = 5.0        # interaction range R, meters
    horizon: float = 2.0       # collision horizon tau, seconds
    v_max: float = 2.0         # admissible speed bound, m/s
    n_dirs: int = 64           # polar sampling: directions
    n_mags: int = 16           # polar sampling: magnitudes per direction
    min_speed: float = 1e-6    # below this the facing is left unchanged


@dataclass
class VelocityObstacle:
    """Truncated velocity cone induced by one neighbor.

    ``apex`` is the reciprocity translation in the agent's velocity space;
    ``left_dir``/``right_dir`` are the unit boundary directions of the cone
    in relative-velocity space; ``horizon`` is the collision time window.
    ``rel_pos``/``combined_radius`` carry the exact geometry used by the
    membership test; ``degenerate`` marks already-overlapping footprints
    (the forbidden set is then the closing half-plane).
    """

    apex: np.ndarray
    left_dir: np.ndarray
    right_dir: np.ndarray
    horizon: float
    rel_pos: np.ndarray
    combined_radius: float
    degenerate: bool = False

    def contains(self, v) -> bool:
        """True iff velocity ``v`` leads to footprint overlap within the horizon."""
        v = np.asarray(v, dtype=float)
        ps = self.rel_pos.reshape(1, 2)
        return bool(
            _kernels.velocity_infeasible(
                float(v[0]), float(v[1]), ps,
                np.array([self.combined_radius]),
                np.array([self.apex[0]]), np.array([self.apex[1]]),
                np.array([self.degenerate]), 1, np.array([self.horizon]),
            )
        )


@dataclass
class NeighborSet:
    """Frontal neighbors of a subject pedestrian, within interaction range."""

    members: list[PedestrianState] = field(default_factory=list)


@dataclass
class FrvoRegion:
    """Union of velocity obstacles; a velocity is infeasible iff inside any cone."""

    obstacles: list[VelocityObstacle] = field(default_factory=list)

    def _arrays(self):
        n = len(self.obstacles)
        ps = np.empty((max(n, 1), 2))
        rs = np.empty(max(n, 1))
        axs = np.empty(max(n, 1))
        ays = np.empty(max(n, 1))
        degs = np.zeros(max(n, 1), np.bool_)
        taus = np.ones(max(n, 1))
        for i, vo in enumerate(self.obstacles):
            ps[i] = vo.rel_pos
            rs[i] = vo.combined_radius
            axs[i] = vo.apex[0]
            ays[i] = vo.apex[1]
            degs[i] = vo.degenerate
            taus[i] = vo.horizon
        return ps, rs, axs, ays, degs, taus, n

    def contains(self, v) -> bool:
        if not self.obstacles:
            return False
        v = np.asarray(v, dtype=float)
        ps, rs, axs, ays, degs, taus, n = self._arrays()
        return bool(_kernels.velocity_infeasible(float(v[0]), float(v[1]), ps, rs, axs, ays, degs, n, taus))


def neighbor_set(subject: PedestrianState, all_peds, radius: float) -> NeighborSet:
    """Neighbors within ``radius`` lying in the subject's frontal half-plane."""
    if not radius > 0:
        raise ValueError("interaction radius must be positive")
    fwd = vec2(math.cos(subject.facing), math.sin(subject.facing))
    members = []
    for other in all_peds:
        if other.id == subject.id:
            continue
        d = other.x - subject.x
        if float(d @ d) > radius * radius:
            continue
        if float(d @ fwd) < 0.0:
            continue
        members.append(other)
    return NeighborSet(members)


def compute_vo(subject: PedestrianState, other: PedestrianState, horizon: float) -> VelocityObstacle:
    """Velocity obstacle induced on ``subject`` by ``other``.

    Footprints are the discs circumscribing each shoulder box; already
    overlapping discs yield a degenerate half-plane obstacle.
    """
    if subject.id == other.id:
        raise ValueError("subject and other must be distinct pedestrians")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rel = other.x - subject.x
    r = subject.radius + other.radius
    apex = 0.5 * (subject.v + other.v)
    d = float(np.linalg.norm(rel))
    if d <= r:
        # Overlapping already: forbid everything that closes the gap.
        out = rel / d if d > 0 else vec2(1.0, 0.0)
        return VelocityObstacle(
            apex=apex, left_dir=vec2(-out[1], out[0]), right_dir=vec2(out[1], -out[0]),
            horizon=horizon, rel_pos=rel.copy(), combined_radius=r, degenerate=True,
        )
    theta = math.atan2(rel[1], rel[0])
    alpha = math.asin(min(1.0, r / d))
    left = theta + alpha
    right = theta - alpha
    return VelocityObstacle(
        apex=apex,
        left_dir=vec2(math.cos(left), math.sin(left)),
        right_dir=vec2(math.cos(right), math.sin(right)),
        horizon=horizon,
        rel_pos=rel.copy(),
        combined_radius=r,
        degenerate=False,
    )


def frvo_union(subject: PedestrianState, neighbors: NeighborSet, horizon: float) -> FrvoRegion:
    """Union of the subject's per-neighbor velocity obstacles."""
    return FrvoRegion([compute_vo(subject, n, horizon) for n in neighbors.members])


def select_best_velocity(v_pref, region: FrvoRegion, v_max: float,
                         params: FrvoParams | None = None) -> tuple[np.ndarray, bool]:
    """Feasible velocity nearest to ``v_pref``; (zero, True) when fully blocked.

    Candidates are sampled deterministically (see module docstring); the
    returned velocity is the candidate-set argmin of ||v - v_pref|| over
    velocities outside the region with magnitude <= v_max.
    """
    params = params or FrvoParams()
    v_pref = np.asarray(v_pref, dtype=float)
    if float(v_pref @ v_pref) > v_max * v_max * (1 + 1e-9):
        raise ValueError("preferred velocity exceeds v_max")
    ps, rs, axs, ays, degs, taus, n = region._arrays()
    cap = _kernels.candidate_capacity(params.n_dirs, params.n_mags, max(n, 1))
    cands = np.empty((cap, 2))
    vx, vy, blocked = _kernels.select_best(
        float(v_pref[0]), float(v_pref[1]), v_max,
        params.n_dirs, params.n_mags, ps, rs, axs, ays, degs, n, taus, cands,
    )
    if blocked:
        return vec2(0.0, 0.0), True
    return vec2(vx, vy), False


def step_pedestrian(p: PedestrianState, all_peds, dt: float,
                    params: FrvoParams | None = None) -> PedestrianState:
    """Advance one pedestrian a single tick against the current crowd state.

    Velocity comes from select_best_velocity over the frontal-neighbor
    obstacle union; a blocked agent stalls in place. The facing follows the
    motion direction; the preferred velocity is left to the caller (it
    points at the pedestrian's scripted waypoint).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = params or FrvoParams()
    nbrs = neighbor_set(p, all_peds, params.radius)
    region = frvo_union(p, nbrs, params.horizon)
    v, blocked = select_best_velocity(p.v_pref, region, params.v_max, params)
    if blocked:
        v = vec2(0.0, 0.0)
    new_x = p.x + v * dt
    speed = float(np.linalg.norm(v))
    facing = math.atan2(v[1], v[0]) if speed > params.min_speed else p.facing
    return replace(p, x=new_x, v=v, facing=facing)


def states_to_array(peds) -> np.ndarray:
    """Pack pedestrian states into the (N, 9) kernel layout."""
    arr = np.empty((len(peds), 9))
    for i, p in enumerate(peds):
        arr[i, 0:2] = p.x
        arr[i, 2:4] = p.v
        arr[i, 4:6] = p.v_pref
        arr[i, 6] = p.l
        arr[i, 7] = p.w
        arr[i, 8] = p.facing
    return arr


def array_to_states(arr, template) -> list[PedestrianState]:
    """Unpack the kernel layout, reusing ids and shoulder dims from ``template``."""
    out = []
    for i, p in enumerate(template):
        out.append(replace(
            p,
            x=arr[i, 0:2].copy(),
            v=arr[i, 2:4].copy(),
            v_pref=arr[i, 4:6].copy(),
            facing=normalize_angle(float(arr[i, 8])),
        ))
    return out


def step_crowd(peds, dt: float, params: FrvoParams | None = None,
               extra_agents=()) -> tuple[list[PedestrianState], np.ndarray]:
    """Advance all pedestrians one synchronous tick (double-buffered).

    Matches step_pedestrian applied to every agent against the same pre-step
    state, with one addition: a reciprocal contact projection separates disc
    pairs that a symmetric squeeze left overlapping (cone complements are
    non-convex, so mutually feasible choices can still creep together by
    millimeters). ``extra_agents`` join everyone's neighbor sets without
    being stepped themselves; the engine uses this so pedestrians treat the
    robot like any other frontal agent. Returns the new states and a
    per-agent blocked mask.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = params or FrvoParams()
    if not peds:
        return [], np.zeros(0, np.bool_)
    arr = states_to_array(list(peds) + list(extra_agents))
    new_arr, blocked = _kernels.step_all(
        arr, params.radius, params.horizon, params.v_max, dt,
        params.n_dirs, params.n_mags, params.min_speed, len(peds),
    )
    return array_to_states(new_arr[:len(peds)], peds), blocked[:len(peds)]
