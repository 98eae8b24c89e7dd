"""Multi-object pedestrian tracker: motion-model prediction, two-stage
appearance + IoU association, and track lifecycle management.

Association per tick is a cascade: a cosine-distance gate on appearance
features restricts which detections each track may claim, then a max-weight
IoU assignment (Hungarian) resolves the one-to-one matching. Tracks whose
gated IoU row is all zero fall back to their most-similar gated detection,
which keeps identities through box-jumping motion. New tracks start
tentative and confirm after a run of consecutive matches; missed tracks die
after too many consecutive misses and never revive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import frvo, sensing
from .core import BBox, PedestrianState, Pose, vec2

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DEAD = "dead"


@dataclass
class TrackerParams:
    gate: float = 0.4          # cosine-distance gate for the candidate set
    min_iou: float = 0.1       # assignments below this are dropped
    max_misses: int = 5        # consecutive misses before a track dies
    n_confirm: int = 3         # consecutive matches to confirm
    feature_ema: float = 0.9   # weight of the old feature in the EMA
    box_blend: float = 0.7     # weight of the measurement in the box/pos blend
    vel_gain: float = 0.4      # innovation gain of the velocity estimate
    predict_min_speed: float = 0.15  # below this a track predicts as standing


@dataclass
class Track:
    """One tracked-pedestrian hypothesis."""

    track_id: int
    state: PedestrianState
    bbox: BBox
    feature: np.ndarray
    fused_range: float
    age: int = 0
    misses: int = 0
    hits: int = 1              # consecutive matches, spawn counts as the first
    status: str = TENTATIVE


@dataclass
class CandidateSet:
    """Per-track detections passing the feature gate, plus each track's argmin."""

    candidates: dict = field(default_factory=dict)   # track_id -> [det index]
    best: dict = field(default_factory=dict)         # track_id -> det index or None


def cosine_distance(f1, f2) -> float:
    """1 - f1.f2 for unit vectors; range [0, 2]."""
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    for f in (f1, f2):
        if abs(float(np.linalg.norm(f)) - 1.0) > 1e-6:
            raise ValueError("cosine_distance expects unit-norm features")
    return 1.0 - float(f1 @ f2)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; zero across cameras."""
    if a.camera_id != b.camera_id:
        return 0.0
    ax0, ax1 = a.cx - a.width / 2, a.cx + a.width / 2
    ay0, ay1 = a.cy - a.height / 2, a.cy + a.height / 2
    bx0, bx1 = b.cx - b.width / 2, b.cx + b.width / 2
    by0, by1 = b.cy - b.height / 2, b.cy + b.height / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def feature_gate(tracks, detections, gate: float) -> CandidateSet:
    """Detections within the cosine gate of each track's running feature."""
    if not 0.0 < gate <= 2.0:
        raise ValueError("gate must lie in (0, 2]")
    out = CandidateSet()
    for tr in tracks:
        dists = [cosine_distance(tr.feature, det.feature) for det in detections]
        kept = [j for j, d in enumerate(dists) if d < gate]
        out.candidates[tr.track_id] = kept
        out.best[tr.track_id] = min(kept, key=lambda j: dists[j]) if kept else None
    return out


def hungarian_assign(matrix, min_iou: float) -> list[tuple[int, int]]:
    """Max-weight one-to-one assignment; pairs below ``min_iou`` are dropped.

    Solved as min-cost assignment on the negated (zero-padded rectangular)
    matrix. Returns (row, column) pairs.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.size == 0:
        return []
    rows, cols = linear_sum_assignment(-m)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if m[r, c] >= min_iou]


def predict_tracks(tracks, dt: float, robot_pose: Pose, rig: sensing.CameraRig,
                   frvo_params: frvo.FrvoParams | None = None,
                   sensor_params: sensing.SensorParams | None = None,
                   params: TrackerParams | None = None) -> list[Track]:
    """Advance live tracks with the crowd motion model; dead tracks unchanged.

    Each live track is stepped against the other live tracks' state
    estimates (preferred velocity = current velocity estimate, zeroed below
    the standing threshold so estimate jitter does not make stationary
    tracks wander), then its box is re-projected from the predicted
    position when that position is in view; otherwise the last box is kept.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    frvo_params = frvo_params or frvo.FrvoParams()
    params = params or TrackerParams()
    live = [tr for tr in tracks if tr.status != DEAD]
    states = []
    for tr in live:
        v = tr.state.v
        if float(np.linalg.norm(v)) < params.predict_min_speed:
            v = vec2(0.0, 0.0)
        states.append(replace(tr.state, v=v.copy(), v_pref=v.copy()))
    out = []
    stepped = {}
    if states:
        new_states, _ = frvo.step_crowd(states, dt, frvo_params)
        stepped = {tr.track_id: st for tr, st in zip(live, new_states)}
    for tr in tracks:
        if tr.status == DEAD:
            out.append(tr)
            continue
        st = stepped[tr.track_id]
        bbox = tr.bbox
        projected = sensing.project_bbox(st, robot_pose, rig, sensor_params)
        if projected is not None:
            bbox = projected[1]
        out.append(replace(tr, state=st, bbox=bbox))
    return out


def _measured_position(det, robot_pose: Pose, rig: sensing.CameraRig,
                       fused: float) -> np.ndarray:
    bearing = robot_pose.heading + sensing.bbox_bearing(det.bbox, rig)
    return robot_pose.position + fused * vec2(math.cos(bearing), math.sin(bearing))


def update_tracks(tracks, detections, assignments, params: TrackerParams,
                  robot_pose: Pose, rig: sensing.CameraRig, dt: float,
                  next_id: int,
                  sensor_params: sensing.SensorParams | None = None) -> tuple[list[Track], int]:
    """Apply one tick's assignment: measurement blends, lifecycle, spawns.

    ``assignments`` maps track list indices to detection indices and must be
    one-to-one. Returns the new track list (spawned tracks appended in
    detection order) and the next free track id.
    """
    sensor_params = sensor_params or sensing.SensorParams()
    seen_tracks = set()
    seen_dets = set()
    for ti, dj in assignments:
        if ti in seen_tracks or dj in seen_dets:
            raise ValueError("duplicate assignment")
        seen_tracks.add(ti)
        seen_dets.add(dj)
    by_track = dict(assignments)
    out = []
    for idx, tr in enumerate(tracks):
        if tr.status == DEAD:
            out.append(tr)
            continue
        if idx in by_track:
            det = detections[by_track[idx]]
            fused = sensing.fuse_range(det.visual_range, det.lidar_range,
                                       det.lidar_inliers, sensor_params)
            z = _measured_position(det, robot_pose, rig, fused)
            pos = params.box_blend * z + (1 - params.box_blend) * tr.state.x
            vel = tr.state.v + params.vel_gain * (z - tr.state.x) / dt
            feature = params.feature_ema * tr.feature + (1 - params.feature_ema) * det.feature
            feature = feature / np.linalg.norm(feature)
            if det.bbox.camera_id == tr.bbox.camera_id:
                bbox = BBox(
                    cx=params.box_blend * det.bbox.cx + (1 - params.box_blend) * tr.bbox.cx,
                    cy=params.box_blend * det.bbox.cy + (1 - params.box_blend) * tr.bbox.cy,
                    width=params.box_blend * det.bbox.width + (1 - params.box_blend) * tr.bbox.width,
                    height=params.box_blend * det.bbox.height + (1 - params.box_blend) * tr.bbox.height,
                    camera_id=det.bbox.camera_id,
                )
            else:  # camera handover: take the new view as-is
                bbox = det.bbox
            hits = tr.hits + 1
            status = tr.status
            if status == TENTATIVE and hits >= params.n_confirm:
                status = CONFIRMED
            out.append(replace(
                tr,
                state=replace(tr.state, x=pos, v=vel, v_pref=vel.copy()),
                bbox=bbox, feature=feature, fused_range=fused,
                age=tr.age + 1, misses=0, hits=hits, status=status,
            ))
        else:
            misses = tr.misses + 1
            status = DEAD if misses > params.max_misses else tr.status
            out.append(replace(tr, age=tr.age + 1, misses=misses, hits=0, status=status))
    for dj, det in enumerate(detections):
        if dj in seen_dets:
            continue
        fused = sensing.fuse_range(det.visual_range, det.lidar_range,
                                   det.lidar_inliers, sensor_params)
        pos = _measured_position(det, robot_pose, rig, fused)
        state = PedestrianState(next_id, pos, vec2(0, 0), vec2(0, 0))
        out.append(Track(
            track_id=next_id, state=state, bbox=det.bbox,
            feature=det.feature.copy(), fused_range=fused,
        ))
        next_id += 1
    return out, next_id


@dataclass
class TickResult:
    tracks: list
    matches: list            # (track_id, detection index) actually applied
    detections: list


class Tracker:
    """Stateful per-robot tracker running the full per-tick cascade."""

    def __init__(self, params: TrackerParams | None = None,
                 frvo_params: frvo.FrvoParams | None = None,
                 sensor_params: sensing.SensorParams | None = None,
                 rig: sensing.CameraRig | None = None):
        self.params = params or TrackerParams()
        self.frvo_params = frvo_params or frvo.FrvoParams()
        self.sensor_params = sensor_params or sensing.SensorParams()
        self.rig = rig or sensing.CameraRig()
        self.tracks: list[Track] = []
        self.next_id = 1

    @property
    def live_tracks(self):
        return [t for t in self.tracks if t.status != DEAD]

    @property
    def confirmed_tracks(self):
        return [t for t in self.tracks if t.status == CONFIRMED]

    def step(self, detections, robot_pose: Pose, dt: float) -> TickResult:
        self.tracks = predict_tracks(self.tracks, dt, robot_pose, self.rig,
                                     self.frvo_params, self.sensor_params, self.params)
        index_ids = [t.track_id for t in self.tracks]
        live_idx = [i for i, t in enumerate(self.tracks) if t.status != DEAD]
        live = [self.tracks[i] for i in live_idx]
        gate = feature_gate(live, detections, self.params.gate)
        matrix = np.zeros((len(live), len(detections)))
        for r, tr in enumerate(live):
            for dj in gate.candidates[tr.track_id]:
                matrix[r, dj] = iou(tr.bbox, detections[dj].bbox)
        pairs = hungarian_assign(matrix, self.params.min_iou) if len(live) and len(detections) else []
        matched_rows = {r for r, _ in pairs}
        matched_dets = {c for _, c in pairs}
        # Fallback: a track with no usable IoU signal (row below min_iou)
        # claims its most similar gated detection when it is still free.
        for r, tr in enumerate(live):
            if r in matched_rows:
                continue
            if matrix[r].max(initial=0.0) >= self.params.min_iou:
                continue
            best = gate.best[tr.track_id]
            if best is not None and best not in matched_dets:
                pairs.append((r, best))
                matched_rows.add(r)
                matched_dets.add(best)
        assignments = [(live_idx[r], c) for r, c in pairs]
        self.tracks, self.next_id = update_tracks(
            self.tracks, detections, assignments, self.params,
            robot_pose, self.rig, dt, self.next_id, self.sensor_params,
        )
        self.tracks = [t for t in self.tracks if t.status != DEAD]
        matches = [(index_ids[ti], c) for ti, c in assignments]
        return TickResult(tracks=list(self.tracks), matches=matches, detections=detections)
