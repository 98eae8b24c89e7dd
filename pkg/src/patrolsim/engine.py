"""Scenario loading, the per-tick mission loop, replay logs, and metrics.

A scenario is a line-oriented text document (header line, then one
``key value...`` record per line) declaring the map, junction graph,
pedestrians, robot, module parameters and seed. A run executes the fixed
pipeline each tick: advance pedestrians, sense and track, rebuild the
social graph and crowds, update the mission state machine (patrol,
approach, advise), and drive the robot with the local policy. Every tick
appends one JSON record to the replay log; metrics are computed purely from
the serialized log so an independent reader reproduces them exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import frvo, localnav, planner, sensing, socialgraph
from .core import PedestrianState, Pose, RngStreams, SimClock, advance, disc_rect_overlap, footprint_corners, vec2
from .localnav import NavParams, PolicyInput, VelocityCommand, apply_command, get_policy, goal_reached, world_to_scan
from .planner import (
    FREE,
    OCCUPIED,
    AdvisoryMonitor,
    CrowdNode,
    Junction,
    OccupancyGrid,
    PlannerParams,
    UnreachableError,
    patrol_direction,
    plan_path,
    route_crowds,
)
from .sensing import CameraRig, SensorParams, identity_feature, sense_world
from .socialgraph import SocialParams, build_social_graph, extract_crowds
from .tracker import CONFIRMED, Tracker, TrackerParams

REPLAY_FORMAT = "patrolsim-replay"
SCENARIO_HEADER = "patrolsim-scenario"
FORMAT_VERSION = 1

WAYPOINT_TOL = 0.3
JUNCTION_TOL = 0.5
PED_GOAL_TOL = 0.2
REPLAN_DRIFT = 1.0
UNREACHABLE_RETRY_TICKS = 50


class ScenarioError(ValueError):
    """Scenario text failed to parse or validate."""


@dataclass
class PedSpec:
    id: int
    start: tuple
    speed: float
    goals: list
    spawn: int = 0
    despawn: int = -1
    l: float = 0.45
    w: float = 0.25


@dataclass
class JunctionSpec:
    id: int
    position: tuple
    links: list


@dataclass
class Scenario:
    seed: int
    duration: int
    dt: float = 0.1
    map_width: int = 80
    map_height: int = 80
    map_resolution: float = 0.25
    map_origin: tuple = (-10.0, -10.0)
    map_border: bool = True
    obstacles: list = field(default_factory=list)        # (x0, y0, x1, y1)
    junctions: list = field(default_factory=list)        # JunctionSpec
    robot_start: tuple = (0.0, 0.0, 0.0)
    robot_policy: str = "reactive_vo"
    pedestrians: list = field(default_factory=list)      # PedSpec
    frvo: frvo.FrvoParams = field(default_factory=frvo.FrvoParams)
    sensor: SensorParams = field(default_factory=SensorParams)
    rig: CameraRig = field(default_factory=CameraRig)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    social: SocialParams = field(default_factory=SocialParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    nav: NavParams = field(default_factory=NavParams)
    p_comply: float = 0.5


_SCALARS = {
    "seed": ("seed", int),
    "duration": ("duration", int),
    "dt": ("dt", float),
    "map.width": ("map_width", int),
    "map.height": ("map_height", int),
    "map.resolution": ("map_resolution", float),
    "map.border": ("map_border", lambda s: bool(int(s))),
    "robot.policy": ("robot_policy", str),
    "comply.p": ("p_comply", float),
}

_GROUPS = {
    "frvo": ("frvo", ("radius", "horizon", "v_max")),
    "sensor": ("sensor", ("sigma_px", "sigma_f", "p_miss", "sigma_r", "outlier_rate",
                          "scan_points", "ransac_delta", "min_inliers", "max_gap",
                          "occlusion_clearance", "feature_dim", "bbox_height_gain")),
    "tracker": ("tracker", ("gate", "min_iou", "max_misses", "n_confirm",
                            "feature_ema", "box_blend", "vel_gain")),
    "social": ("social", ("d_red", "d_yellow", "edge_max", "window")),
    "planner": ("planner", ("ground_min", "height_max", "energy_per_meter", "max_crowds",
                            "advisory_radius", "advisory_hysteresis", "appearance_decay")),
    "nav": ("nav", ("v_max", "omega_max", "robot_radius", "beams", "max_range",
                    "horizon", "cluster_jump", "safety_margin", "slow_radius",
                    "brake_range", "turn_gain")),
    "rig": ("rig", ("max_range", "fov_deg")),
}

_INT_FIELDS = {"scan_points", "min_inliers", "feature_dim", "max_misses",
               "n_confirm", "window", "max_crowds", "beams"}


def _err(line_no, msg):
    raise ScenarioError(f"line {line_no}: {msg}")


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document; unknown keys are rejected."""
    lines = text.splitlines()
    if not lines or lines[0].split("#")[0].split() != [SCENARIO_HEADER, f"v{FORMAT_VERSION}"]:
        raise ScenarioError(f"line 1: expected header '{SCENARIO_HEADER} v{FORMAT_VERSION}'")
    fields = {}
    obstacles = []
    junctions = []
    pedestrians = []
    groups = {name: {} for name in _GROUPS}
    for line_no, raw in enumerate(lines[1:], start=2):
        tokens = raw.split("#")[0].split()
        if not tokens:
            continue
        key = tokens[0]
        args = tokens[1:]
        try:
            if key in _SCALARS:
                attr, conv = _SCALARS[key]
                if len(args) != 1:
                    _err(line_no, f"{key} expects one value")
                fields[attr] = conv(args[0])
            elif key == "map.origin":
                if len(args) != 2:
                    _err(line_no, "map.origin expects x y")
                fields["map_origin"] = (float(args[0]), float(args[1]))
            elif key == "robot.start":
                if len(args) != 3:
                    _err(line_no, "robot.start expects x y heading")
                fields["robot_start"] = tuple(float(a) for a in args)
            elif key == "obstacle":
                if len(args) != 4:
                    _err(line_no, "obstacle expects x0 y0 x1 y1")
                x0, y0, x1, y1 = (float(a) for a in args)
                obstacles.append((min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)))
            elif key == "junction":
                if len(args) < 4:
                    _err(line_no, "junction expects id x y link [link...]")
                junctions.append(JunctionSpec(
                    id=int(args[0]), position=(float(args[1]), float(args[2])),
                    links=[int(a) for a in args[3:]]))
            elif key == "ped":
                pedestrians.append(_parse_ped(args, line_no))
            elif "." in key and key.split(".", 1)[0] in _GROUPS:
                prefix, sub = key.split(".", 1)
                attr, allowed = _GROUPS[prefix]
                if sub not in allowed:
                    _err(line_no, f"unknown field {key!r}")
                if len(args) != 1:
                    _err(line_no, f"{key} expects one value")
                conv = int if sub in _INT_FIELDS else float
                groups[prefix][sub] = conv(args[0])
            else:
                _err(line_no, f"unknown key {key!r}")
        except ScenarioError:
            raise
        except ValueError as e:
            _err(line_no, f"bad value for {key!r}: {e}")
    if "seed" not in fields:
        raise ScenarioError("scenario must declare a seed")
    if "duration" not in fields:
        raise ScenarioError("scenario must declare a duration")
    scenario = Scenario(
        obstacles=obstacles, junctions=junctions, pedestrians=pedestrians, **fields)
    for prefix, values in groups.items():
        attr = _GROUPS[prefix][0]
        setattr(scenario, attr, replace(getattr(scenario, attr), **values))
    _validate(scenario)
    return scenario


def _parse_ped(args, line_no):
    if len(args) < 1:
        _err(line_no, "ped expects an id")
    pid = int(args[0])
    kw = {"id": pid, "start": None, "speed": 1.0, "goals": []}
    i = 1
    while i < len(args):
        word = args[i]
        if word == "start":
            kw["start"] = (float(args[i + 1]), float(args[i + 2]))
            i += 3
        elif word == "speed":
            kw["speed"] = float(args[i + 1])
            i += 2
        elif word == "goals":
            i += 1
            while i < len(args) and _is_number(args[i]):
                if i + 1 >= len(args) or not _is_number(args[i + 1]):
                    _err(line_no, f"ped {pid}: goals need x y pairs")
                kw["goals"].append((float(args[i]), float(args[i + 1])))
                i += 2
        elif word in ("spawn", "despawn"):
            kw[word] = int(args[i + 1])
            i += 2
        elif word in ("l", "w"):
            kw[word] = float(args[i + 1])
            i += 2
        else:
            _err(line_no, f"unknown ped field {word!r}")
    if kw["start"] is None:
        _err(line_no, f"ped {pid}: missing start")
    if not kw["goals"]:
        _err(line_no, f"ped {pid}: at least one goal required")
    return PedSpec(**kw)


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def build_grid(sc: Scenario) -> OccupancyGrid:
    cells = np.full((sc.map_height, sc.map_width), FREE, dtype=np.int8)
    grid = OccupancyGrid(resolution=sc.map_resolution, origin=vec2(*sc.map_origin), cells=cells)
    if sc.map_border:
        cells[0, :] = OCCUPIED
        cells[-1, :] = OCCUPIED
        cells[:, 0] = OCCUPIED
        cells[:, -1] = OCCUPIED
    for x0, y0, x1, y1 in sc.obstacles:
        r0, c0 = grid.cell_of((x0, y0))
        r1, c1 = grid.cell_of((x1, y1))
        r0, c0 = max(r0, 0), max(c0, 0)
        r1, c1 = min(r1, sc.map_height - 1), min(c1, sc.map_width - 1)
        if r1 >= r0 and c1 >= c0:
            cells[r0:r1 + 1, c0:c1 + 1] = OCCUPIED
    return grid


def _validate(sc: Scenario):
    if sc.duration < 0:
        raise ScenarioError("field duration: must be non-negative")
    if not sc.dt > 0:
        raise ScenarioError("field dt: must be positive")
    if sc.map_width < 3 or sc.map_height < 3:
        raise ScenarioError("field map.width/map.height: map too small")
    if not 0.0 <= sc.p_comply <= 1.0:
        raise ScenarioError("field comply.p: must lie in [0, 1]")
    get_policy(sc.robot_policy)
    grid = build_grid(sc)
    if not grid.is_free(*grid.cell_of(sc.robot_start[:2])):
        raise ScenarioError("field robot.start: not inside a free map cell")
    seen = set()
    for p in sc.pedestrians:
        if p.id in seen:
            raise ScenarioError(f"field ped.{p.id}: duplicate pedestrian id")
        seen.add(p.id)
        if not grid.is_free(*grid.cell_of(p.start)):
            raise ScenarioError(f"field ped.{p.id}.start: not inside a free map cell")
        if p.speed <= 0:
            raise ScenarioError(f"field ped.{p.id}.speed: must be positive")
        if p.despawn != -1 and p.despawn <= p.spawn:
            raise ScenarioError(f"field ped.{p.id}.despawn: must exceed spawn")
        for gx, gy in p.goals:
            if not grid.in_bounds(*grid.cell_of((gx, gy))):
                raise ScenarioError(f"field ped.{p.id}.goals: goal outside the map")
    jid = {j.id for j in sc.junctions}
    if len(jid) != len(sc.junctions):
        raise ScenarioError("field junction: duplicate junction id")
    for j in sc.junctions:
        for link in j.links:
            if link not in jid:
                raise ScenarioError(f"field junction.{j.id}: link {link} does not exist")
        if not grid.is_free(*grid.cell_of(j.position)):
            raise ScenarioError(f"field junction.{j.id}: not inside a free map cell")


def serialize_scenario(sc: Scenario) -> str:
    """Canonical text form with every field (defaults included) echoed."""
    out = [f"{SCENARIO_HEADER} v{FORMAT_VERSION}"]
    out.append(f"seed {sc.seed}")
    out.append(f"duration {sc.duration}")
    out.append(f"dt {sc.dt!r}")
    out.append(f"map.width {sc.map_width}")
    out.append(f"map.height {sc.map_height}")
    out.append(f"map.resolution {sc.map_resolution!r}")
    out.append(f"map.origin {sc.map_origin[0]!r} {sc.map_origin[1]!r}")
    out.append(f"map.border {int(sc.map_border)}")
    for ob in sc.obstacles:
        out.append("obstacle " + " ".join(repr(v) for v in ob))
    for j in sorted(sc.junctions, key=lambda j: j.id):
        links = " ".join(str(x) for x in j.links)
        out.append(f"junction {j.id} {j.position[0]!r} {j.position[1]!r} {links}")
    out.append("robot.start " + " ".join(repr(v) for v in sc.robot_start))
    out.append(f"robot.policy {sc.robot_policy}")
    for p in sorted(sc.pedestrians, key=lambda p: p.id):
        goals = " ".join(f"{g[0]!r} {g[1]!r}" for g in p.goals)
        out.append(f"ped {p.id} start {p.start[0]!r} {p.start[1]!r} speed {p.speed!r} "
                   f"goals {goals} spawn {p.spawn} despawn {p.despawn} l {p.l!r} w {p.w!r}")
    for prefix, (attr, names) in _GROUPS.items():
        obj = getattr(sc, attr)
        for name in names:
            v = getattr(obj, name)
            out.append(f"{prefix}.{name} {v!r}" if not isinstance(v, int) or isinstance(v, bool)
                       else f"{prefix}.{name} {v}")
    out.append(f"comply.p {sc.p_comply!r}")
    return "\n".join(out) + "\n"


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return load_scenario(f.read())


# --- replay serialization -------------------------------------------------

def _canon(value):
    """Round floats to 9 significant digits for stable replay bytes."""
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    if isinstance(value, dict):
        return {k: _canon(v) for k, v in value.items()}
    if isinstance(value, (np.floating,)):
        return float(f"{float(value):.9g}")
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def dump_record(record: dict) -> str:
    return json.dumps(_canon(record), sort_keys=True, separators=(",", ":"))


@dataclass
class MissionState:
    mode: str = "patrol"                 # patrol | approaching | advising
    target_crowd: int | None = None
    route_ids: list = field(default_factory=list)
    path: list = field(default_factory=list)
    path_index: int = 0
    patrol_target: int | None = None     # junction id being walked to


class Engine:
    """One simulation run; owns all mutable state."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.clock = SimClock(0, scenario.dt)
        self.streams = RngStreams(scenario.seed)
        self.grid = build_grid(scenario)
        self.robot = Pose(*scenario.robot_start)
        self.policy = get_policy(scenario.robot_policy)()
        self.tracker = Tracker(params=scenario.tracker, frvo_params=scenario.frvo,
                               sensor_params=scenario.sensor, rig=scenario.rig)
        self.identities = {p.id: identity_feature(self.streams, p.id, scenario.sensor.feature_dim)
                           for p in scenario.pedestrians}
        self.peds: dict[int, PedestrianState] = {}
        self.ped_goal_index = {p.id: 0 for p in scenario.pedestrians}
        self.dispersal_goal: dict[int, np.ndarray] = {}
        self.prev_crowds = []
        self.next_crowd_id = 1
        self.monitor = AdvisoryMonitor(scenario.planner)
        self.mission = MissionState()
        self.track_truth: dict[int, int] = {}
        self.unreachable: dict[int, int] = {}
        self.junctions: dict[int, Junction] = {}
        self.junction_links: dict[int, list] = {}
        for spec in scenario.junctions:
            dirs = []
            links = []
            for link in spec.links:
                other = next(j for j in scenario.junctions if j.id == link)
                d = vec2(*other.position) - vec2(*spec.position)
                n = float(np.linalg.norm(d))
                if n == 0:
                    continue
                dirs.append(d / n)
                links.append(link)
            if dirs:
                self.junctions[spec.id] = Junction(position=vec2(*spec.position), exit_dirs=dirs)
                self.junction_links[spec.id] = links

    # -- pedestrians --------------------------------------------------

    def _sync_population(self):
        tick = self.clock.tick
        for spec in self.sc.pedestrians:
            alive = spec.spawn <= tick and (spec.despawn == -1 or tick < spec.despawn)
            if alive and spec.id not in self.peds:
                goal = vec2(*spec.goals[0])
                d = goal - vec2(*spec.start)
                facing = math.atan2(d[1], d[0]) if np.linalg.norm(d) > 0 else 0.0
                self.peds[spec.id] = PedestrianState(
                    spec.id, vec2(*spec.start), vec2(0, 0), vec2(0, 0),
                    l=spec.l, w=spec.w, facing=facing)
            elif not alive and spec.id in self.peds:
                del self.peds[spec.id]

    def _ped_goal(self, spec: PedSpec, state: PedestrianState) -> np.ndarray:
        if spec.id in self.dispersal_goal:
            return self.dispersal_goal[spec.id]
        idx = self.ped_goal_index[spec.id]
        goal = vec2(*spec.goals[idx % len(spec.goals)])
        if float(np.linalg.norm(goal - state.x)) <= PED_GOAL_TOL and spec.id not in self.dispersal_goal:
            self.ped_goal_index[spec.id] = idx + 1
            goal = vec2(*spec.goals[(idx + 1) % len(spec.goals)])
        return goal

    def _advance_pedestrians(self):
        self._sync_population()
        specs = {p.id: p for p in self.sc.pedestrians}
        dt = self.clock.dt
        ordered = [self.peds[k] for k in sorted(self.peds)]
        for state in ordered:
            goal = self._ped_goal(specs[state.id], state)
            to_goal = goal - state.x
            d = float(np.linalg.norm(to_goal))
            speed = specs[state.id].speed
            state.v_pref = to_goal / d * min(speed, d / dt) if d > 1e-9 else vec2(0, 0)
        stepped, _ = frvo.step_crowd(ordered, dt, self.sc.frvo)
        self.peds = {p.id: p for p in stepped}

    # -- mission helpers ----------------------------------------------

    def _plan_to(self, target: np.ndarray) -> list | None:
        try:
            return plan_path(self.grid, self.robot.position, target)
        except UnreachableError:
            return None

    def _try_route(self, crowds):
        """Pick a reachable target from a fresh route; fall back to patrol."""
        tick = self.clock.tick
        eligible = [
            c for c in crowds
            if tick <= c.time_window and c.crowd_id not in self.monitor.active
            and not (c.crowd_id in self.unreachable
                     and tick - self.unreachable[c.crowd_id] < UNREACHABLE_RETRY_TICKS)
        ]
        eligible.sort(key=lambda c: (-c.weight, c.crowd_id))
        eligible = eligible[:self.sc.planner.max_crowds]
        route = route_crowds(
            [CrowdNode(c.crowd_id, c.centroid, c.weight, c.time_window) for c in eligible],
            self.robot.position, self.clock, self.sc.nav.v_max, self.sc.planner)
        by_id = {c.crowd_id: c for c in crowds}
        for node in route.nodes:
            path = self._plan_to(by_id[node.crowd_id].centroid)
            if path is None:
                self.unreachable[node.crowd_id] = tick
                continue
            self.mission.mode = "approaching"
            self.mission.target_crowd = node.crowd_id
            self.mission.route_ids = [n.crowd_id for n in route.nodes]
            self.mission.path = path
            self.mission.path_index = 1 if len(path) > 1 else 0
            return
        self.mission.mode = "patrol"
        self.mission.target_crowd = None
        self.mission.route_ids = []
        self.mission.path = []
        self.mission.path_index = 0

    def _update_mission(self, crowds):
        tick = self.clock.tick
        by_id = {c.crowd_id: c for c in crowds}
        m = self.mission
        if m.mode == "patrol":
            if any(tick <= c.time_window and c.crowd_id not in self.monitor.active for c in crowds):
                self._try_route(crowds)
        elif m.mode == "approaching":
            target = by_id.get(m.target_crowd)
            if target is None or tick > target.time_window:
                self._try_route(crowds)
            else:
                dist = float(np.linalg.norm(target.centroid - self.robot.position))
                if dist < self.sc.planner.advisory_radius:
                    m.mode = "advising"
                    m.path = []
                    m.path_index = 0
                else:
                    end = m.path[-1] if m.path else None
                    if end is None or float(np.linalg.norm(target.centroid - end)) > REPLAN_DRIFT:
                        path = self._plan_to(target.centroid)
                        if path is None:
                            self.unreachable[m.target_crowd] = tick
                            self._try_route(crowds)
                        else:
                            m.path = path
                            m.path_index = 1 if len(path) > 1 else 0
        elif m.mode == "advising":
            target = by_id.get(m.target_crowd)
            if target is None or tick > target.time_window:
                m.mode = "patrol"
                m.target_crowd = None
                m.route_ids = []
                self._try_route(crowds)

    def _apply_compliance(self, events, crowds):
        """Advised crowd members flip a coin; compliers get dispersal goals."""
        by_id = {c.crowd_id: c for c in crowds}
        out = []
        d_yellow = self.sc.social.d_yellow
        for ev in events:
            crowd = by_id.get(ev.crowd_id)
            targets = []
            if crowd is not None:
                truths = {self.track_truth.get(m) for m in crowd.member_ids}
                targets = sorted(t for t in truths if t is not None and t in self.peds)
            complied = []
            for t in targets:
                coin = self.streams.stream("comply", t, ev.message_id).random()
                if coin < self.sc.p_comply:
                    complied.append(t)
            m = len(complied)
            if m:
                radius = max(d_yellow, d_yellow / (2 * math.sin(math.pi / max(m, 2))))
                centroid = crowd.centroid
                lo = self.grid.origin + 0.75
                hi = self.grid.origin + vec2(self.sc.map_width, self.sc.map_height) * self.sc.map_resolution - 0.75
                for k, t in enumerate(complied):
                    ang = 2 * math.pi * k / m
                    goal = centroid + radius * vec2(math.cos(ang), math.sin(ang))
                    goal = np.minimum(np.maximum(goal, lo), hi)
                    self.dispersal_goal[t] = goal
            out.append({
                "crowd": ev.crowd_id, "distance": ev.distance,
                "message": ev.message_id, "targets": targets, "complied": complied,
            })
        return out

    def _patrol_goal(self):
        """Waypoint to follow while in patrol mode; None to hold position."""
        m = self.mission
        if not self.junctions:
            return None
        if m.patrol_target is None:
            m.patrol_target = min(
                self.junctions,
                key=lambda j: float(np.linalg.norm(self.junctions[j].position - self.robot.position)))
        target = self.junctions[m.patrol_target]
        if goal_reached(self.robot, target.position, JUNCTION_TOL):
            target.decay(self.sc.planner.appearance_decay)
            exit_idx = patrol_direction(target)
            target.last_visit[exit_idx] = self.clock.tick
            m.patrol_target = self.junction_links[m.patrol_target][exit_idx]
            target = self.junctions[m.patrol_target]
            path = self._plan_to(target.position)
            m.path = path or []
            m.path_index = 1 if path and len(path) > 1 else 0
        if not m.path:
            path = self._plan_to(target.position)
            m.path = path or []
            m.path_index = 1 if path and len(path) > 1 else 0
        return self._follow_path()

    def _follow_path(self):
        m = self.mission
        while m.path and m.path_index < len(m.path) and \
                goal_reached(self.robot, m.path[m.path_index], WAYPOINT_TOL):
            m.path_index += 1
        if m.path and m.path_index < len(m.path):
            return m.path[m.path_index]
        return m.path[-1] if m.path else None

    def _credit_junction(self, crowd):
        if not self.junctions:
            return
        jid = min(self.junctions,
                  key=lambda j: float(np.linalg.norm(self.junctions[j].position - crowd.centroid)))
        self.junctions[jid].observe_crowd(crowd.centroid - self.junctions[jid].position)

    # -- the tick ------------------------------------------------------

    def step(self) -> dict:
        tick = self.clock.tick
        self._advance_pedestrians()
        world = [self.peds[k] for k in sorted(self.peds)]

        detections = sense_world(world, self.robot, self.streams, tick,
                                 self.sc.rig, self.sc.sensor, self.identities)
        result = self.tracker.step(detections, self.robot, self.clock.dt)
        matched = {}
        for track_id, dj in result.matches:
            truth = detections[dj].truth_id
            self.track_truth[track_id] = truth
            matched[track_id] = truth

        graph = build_social_graph(self.tracker.confirmed_tracks, self.robot,
                                   self.sc.rig, self.sc.social)
        crowds, self.next_crowd_id = extract_crowds(
            graph, self.clock, self.sc.social.window, self.prev_crowds, self.next_crowd_id)
        for c in crowds:
            if c.first_seen == tick:
                self._credit_junction(c)
        self.prev_crowds = crowds

        self._update_mission(crowds)
        if self.mission.mode == "patrol":
            targeted = []
        else:
            targeted = [(c.crowd_id, c.centroid) for c in crowds
                        if c.crowd_id in self.mission.route_ids]
        events = self.monitor.update(tick, self.robot.position, targeted)
        adv_records = self._apply_compliance(events, crowds)

        if self.mission.mode == "advising":
            goal_world = None
        elif self.mission.mode == "approaching":
            goal_world = self._follow_path()
        else:
            goal_world = self._patrol_goal()

        scan = world_to_scan(self.robot, self.grid, world, self.sc.nav)
        if goal_world is None:
            cmd, blocked = VelocityCommand(0.0, 0.0), False
        else:
            d = goal_world - self.robot.position
            c, s = math.cos(-self.robot.heading), math.sin(-self.robot.heading)
            goal_rf = vec2(c * d[0] - s * d[1], s * d[0] + c * d[1])
            cmd, blocked = self.policy(PolicyInput(scan, goal_rf), self.sc.nav)

        record = {
            "t": tick,
            "peds": [[p.id, float(p.x[0]), float(p.x[1]), float(p.v[0]), float(p.v[1]), p.facing]
                     for p in world],
            "tracks": [
                [tr.track_id, tr.status,
                 float(pos[0]), float(pos[1]), tr.fused_range,
                 matched.get(tr.track_id, -1)]
                for tr in result.tracks
                for pos in [socialgraph.track_world_position(tr, self.robot, self.sc.rig)]
            ],
            "crowds": [
                [c.crowd_id, sorted(c.member_ids), float(c.centroid[0]), float(c.centroid[1]),
                 c.weight, c.first_seen, c.time_window]
                for c in crowds
            ],
            "mission": [self.mission.mode,
                        -1 if self.mission.target_crowd is None else self.mission.target_crowd,
                        list(self.mission.route_ids)],
            "robot": [self.robot.x, self.robot.y, self.robot.heading,
                      cmd.linear, cmd.angular, int(blocked)],
            "adv": adv_records,
        }

        self.robot = apply_command(self.robot, cmd, self.clock.dt)
        self.clock = advance(self.clock)
        return record


def run(scenario: Scenario) -> tuple[list[str], "MetricsSummary"]:
    """Execute a scenario; returns the replay log lines and its metrics."""
    engine = Engine(scenario)
    header = {
        "format": REPLAY_FORMAT,
        "version": FORMAT_VERSION,
        "scenario": scenario_dict(scenario),
    }
    lines = [json.dumps(_canon(header), sort_keys=True, separators=(",", ":"))]
    for _ in range(scenario.duration):
        lines.append(dump_record(engine.step()))
    return lines, metrics_from_lines(lines)


def scenario_dict(sc: Scenario) -> dict:
    d = {
        "seed": sc.seed, "duration": sc.duration, "dt": sc.dt,
        "map": {"width": sc.map_width, "height": sc.map_height,
                "resolution": sc.map_resolution, "origin": list(sc.map_origin),
                "border": int(sc.map_border)},
        "obstacles": [list(o) for o in sc.obstacles],
        "junctions": [{"id": j.id, "position": list(j.position), "links": list(j.links)}
                      for j in sc.junctions],
        "robot": {"start": list(sc.robot_start), "policy": sc.robot_policy},
        "peds": [{"id": p.id, "start": list(p.start), "speed": p.speed,
                  "goals": [list(g) for g in p.goals], "spawn": p.spawn,
                  "despawn": p.despawn, "l": p.l, "w": p.w}
                 for p in sc.pedestrians],
        "params": {
            "frvo": asdict(sc.frvo), "sensor": asdict(sc.sensor),
            "tracker": asdict(sc.tracker), "social": asdict(sc.social),
            "planner": asdict(sc.planner), "nav": asdict(sc.nav),
            "rig": {"max_range": sc.rig.max_range, "fov_deg": sc.rig.fov_deg,
                    "mount_yaws_deg": list(sc.rig.mount_yaws_deg)},
            "p_comply": sc.p_comply,
        },
    }
    return d


# --- metrics (a pure function of the replay) -------------------------------

@dataclass
class MetricsSummary:
    ticks: int = 0
    collisions: int = 0
    id_switches: int = 0
    crowd_precision: float = 1.0
    crowd_recall: float = 1.0
    advisories: int = 0
    compliance_targets: int = 0
    compliance_adopted: int = 0
    mean_dissolution_ticks: float = 0.0
    distance_traveled: float = 0.0

    def to_dict(self):
        return asdict(self)


class _DSU:
    def __init__(self, items):
        self.p = {i: i for i in items}

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[ra] = rb


def truth_clusters(ped_rows, d_yellow):
    """Ground-truth gatherings: distance-threshold components of size >= 2."""
    ids = [r[0] for r in ped_rows]
    pos = {r[0]: vec2(r[1], r[2]) for r in ped_rows}
    dsu = _DSU(ids)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if float(np.linalg.norm(pos[a] - pos[b])) < d_yellow:
                dsu.union(a, b)
    groups = {}
    for i in ids:
        groups.setdefault(dsu.find(i), set()).add(i)
    return [frozenset(g) for g in groups.values() if len(g) >= 2]


def metrics_from_lines(lines) -> MetricsSummary:
    header = json.loads(lines[0])
    if header.get("format") != REPLAY_FORMAT:
        raise ValueError("not a replay log")
    sc = header["scenario"]
    d_yellow = sc["params"]["social"]["d_yellow"]
    robot_radius = sc["params"]["nav"]["robot_radius"]
    ped_dims = {p["id"]: (p["l"], p["w"]) for p in sc["peds"]}

    m = MetricsSummary()
    prev_robot = None
    prev_overlap = set()
    track_truth = {}
    last_matched = {}
    crowd_first = {}
    crowd_last = {}
    tp = detected_total = truth_total = 0

    for line in lines[1:]:
        rec = json.loads(line)
        m.ticks += 1
        rx, ry = rec["robot"][0], rec["robot"][1]
        if prev_robot is not None:
            m.distance_traveled += math.hypot(rx - prev_robot[0], ry - prev_robot[1])
        prev_robot = (rx, ry)

        overlap = set()
        for pid, x, y, vx, vy, facing in rec["peds"]:
            l, w = ped_dims[pid]
            state = PedestrianState(pid, vec2(x, y), vec2(vx, vy), vec2(0, 0),
                                    l=l, w=w, facing=facing)
            if disc_rect_overlap(vec2(rx, ry), robot_radius, footprint_corners(state)):
                overlap.add(pid)
        m.collisions += len(overlap - prev_overlap)
        prev_overlap = overlap

        for tid, status, x, y, rng, truth in rec["tracks"]:
            if truth < 0:
                continue
            if tid in last_matched and last_matched[tid] != truth and status == CONFIRMED:
                m.id_switches += 1
            last_matched[tid] = truth
            track_truth[tid] = truth

        truths = truth_clusters(rec["peds"], d_yellow)
        truth_total += len(truths)
        detected_total += len(rec["crowds"])
        used = set()
        for crowd in rec["crowds"]:
            members = {track_truth.get(tid) for tid in crowd[1]}
            members.discard(None)
            best_j, best_i = 0.0, None
            for i, cluster in enumerate(truths):
                if i in used:
                    continue
                j = len(members & cluster) / len(members | cluster) if members | cluster else 0.0
                if j > best_j:
                    best_j, best_i = j, i
            if best_i is not None and best_j >= 0.5:
                tp += 1
                used.add(best_i)
            cid = crowd[0]
            crowd_first.setdefault(cid, rec["t"])
            crowd_last[cid] = rec["t"]

        m.advisories += len(rec["adv"])
        for adv in rec["adv"]:
            m.compliance_targets += len(adv["targets"])
            m.compliance_adopted += len(adv["complied"])

    m.crowd_precision = tp / detected_total if detected_total else 1.0
    m.crowd_recall = tp / truth_total if truth_total else 1.0
    final_tick = m.ticks - 1
    dissolved = [crowd_last[c] - crowd_first[c] + 1 for c in crowd_first
                 if crowd_last[c] < final_tick]
    m.mean_dissolution_ticks = float(np.mean(dissolved)) if dissolved else 0.0
    return m


def write_replay(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_replay(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        return f.read().splitlines()
