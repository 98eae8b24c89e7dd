"""Pedestrian-proximity graph and crowd-gathering extraction.

Nodes are confirmed tracks placed in the world from their sensed bearing
and fused range; edges classify pairwise distance as safe, warning or
dangerous. Crowds are the connected components over warning+dangerous
edges, which keeps the detector robust to position error: the grouping only
depends on which side of the distance thresholds each pair falls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sensing
from .core import Pose, SimClock, vec2

SAFE = "safe"
WARNING = "warning"
DANGEROUS = "dangerous"


@dataclass
class SocialParams:
    d_red: float = 1.0       # below: dangerous
    d_yellow: float = 2.0    # below (and >= d_red): warning
    edge_max: float = 5.0    # pairs farther apart carry no edge at all
    window: int = 300        # ticks a crowd stays worth routing to


@dataclass
class SocialEdge:
    a: int                   # track ids, a < b
    b: int
    distance: float
    klass: str


@dataclass
class SocialGraph:
    nodes: dict = field(default_factory=dict)   # track_id -> world position
    edges: list = field(default_factory=list)


@dataclass
class CrowdGraph:
    """A connected warning/dangerous component, tracked over time."""

    crowd_id: int
    member_ids: frozenset
    centroid: np.ndarray
    weight: int
    first_seen: int
    time_window: int         # deadline tick


def classify_edge(distance: float, params: SocialParams | None = None) -> str:
    """Half-open bands: [0, d_red) dangerous, [d_red, d_yellow) warning."""
    params = params or SocialParams()
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if distance < params.d_red:
        return DANGEROUS
    if distance < params.d_yellow:
        return WARNING
    return SAFE


def track_world_position(track, robot_pose: Pose, rig: sensing.CameraRig) -> np.ndarray:
    """Node position: robot pose combined with sensed bearing and fused range."""
    bearing = robot_pose.heading + sensing.bbox_bearing(track.bbox, rig)
    return robot_pose.position + track.fused_range * vec2(math.cos(bearing), math.sin(bearing))


def build_social_graph(tracks, robot_pose: Pose, rig: sensing.CameraRig | None = None,
                       params: SocialParams | None = None) -> SocialGraph:
    """Graph over confirmed tracks; all pairs within edge_max get an edge."""
    params = params or SocialParams()
    rig = rig or sensing.CameraRig()
    confirmed = [t for t in tracks if t.status == "confirmed"]
    graph = SocialGraph()
    for t in confirmed:
        graph.nodes[t.track_id] = track_world_position(t, robot_pose, rig)
    ids = sorted(graph.nodes)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            d = float(np.linalg.norm(graph.nodes[a] - graph.nodes[b]))
            if d <= params.edge_max:
                graph.edges.append(SocialEdge(a=a, b=b, distance=d, klass=classify_edge(d, params)))
    return graph


def extract_crowds(graph: SocialGraph, clock: SimClock, window: int,
                   previous, next_crowd_id: int) -> tuple[list[CrowdGraph], int]:
    """Connected components over warning+dangerous edges, size >= 2.

    Components are matched to the previous tick's crowds by member overlap
    (|intersection| / max(sizes) >= 0.5, greedy, largest overlap first) to
    preserve identity and first_seen; unmatched components become new crowds
    with deadline first_seen + window.
    """
    adj = {n: [] for n in graph.nodes}
    for e in graph.edges:
        if e.klass in (WARNING, DANGEROUS):
            adj[e.a].append(e.b)
            adj[e.b].append(e.a)
    components = []
    seen = set()
    for start in sorted(adj):
        if start in seen:
            continue
        stack = [start]
        comp = set()
        while stack:
            n = stack.pop()
            if n in comp:
                continue
            comp.add(n)
            stack.extend(m for m in adj[n] if m not in comp)
        seen |= comp
        if len(comp) >= 2:
            components.append(frozenset(comp))
    components.sort(key=min)

    # Greedy identity matching against the previous crowds.
    pairs = []
    for ci, comp in enumerate(components):
        for prev in previous:
            inter = len(comp & prev.member_ids)
            if inter == 0:
                continue
            if inter / max(len(comp), len(prev.member_ids)) >= 0.5:
                pairs.append((inter, ci, prev))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2].crowd_id))
    assigned = {}
    used_prev = set()
    for inter, ci, prev in pairs:
        if ci in assigned or prev.crowd_id in used_prev:
            continue
        assigned[ci] = prev
        used_prev.add(prev.crowd_id)

    crowds = []
    for ci, comp in enumerate(components):
        centroid = np.mean([graph.nodes[m] for m in sorted(comp)], axis=0)
        if ci in assigned:
            prev = assigned[ci]
            first_seen = prev.first_seen
            crowd_id = prev.crowd_id
            deadline = prev.time_window
        else:
            first_seen = clock.tick
            crowd_id = next_crowd_id
            next_crowd_id += 1
            deadline = first_seen + window
        crowds.append(CrowdGraph(
            crowd_id=crowd_id, member_ids=comp, centroid=centroid,
            weight=len(comp), first_seen=first_seen, time_window=deadline,
        ))
    return crowds, next_crowd_id
