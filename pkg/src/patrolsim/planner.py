"""Patrol and crowd-aware routing over a 2D occupancy grid.

Covers the mission-level planning surface: projecting 3D points into an
occupancy grid (with ground filtering so steps and curbs stay traversable),
choosing patrol directions at junctions by where crowds have historically
appeared, ordering crowd visits by a depth-first search over Eq-style costs
(energy minus collected weights minus visit count) under hard deadlines,
grid path planning with line-of-sight smoothing, and the close-range
advisory trigger with hysteresis.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Pose, SimClock, vec2

FREE = 0
OCCUPIED = 1
UNKNOWN = 2


class UnreachableError(Exception):
    """No collision-free grid path exists between the requested cells."""


@dataclass
class PlannerParams:
    ground_min: float = 0.30          # points below this height are terrain
    height_max: float = 2.5           # points above this are overhead clutter
    energy_per_meter: float = 0.5     # lambda: energy cost per meter of edge
    max_crowds: int = 10              # routing instance size bound
    advisory_radius: float = 5.0      # advisory trigger distance, meters
    advisory_hysteresis: float = 1.0  # must retreat this far past the radius
    appearance_decay: float = 0.99    # junction count decay per visit cycle


@dataclass
class OccupancyGrid:
    resolution: float
    origin: np.ndarray                # world position of cell (0, 0)'s corner
    cells: np.ndarray                 # (rows, cols) int8 of FREE/OCCUPIED/UNKNOWN

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        self.origin = np.asarray(self.origin, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int8)

    @property
    def shape(self):
        return self.cells.shape

    def cell_of(self, point) -> tuple[int, int]:
        p = np.asarray(point, dtype=float)
        col = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        row = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        return row, col

    def center_of(self, row: int, col: int) -> np.ndarray:
        return self.origin + self.resolution * vec2(col + 0.5, row + 0.5)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.cells.shape[0] and 0 <= col < self.cells.shape[1]

    def is_free(self, row: int, col: int) -> bool:
        return self.in_bounds(row, col) and self.cells[row, col] == FREE


def project_occupancy(points, resolution: float, origin, shape: tuple[int, int],
                      params: PlannerParams | None = None) -> OccupancyGrid:
    """Flatten 3D points into free/occupied/unknown cells.

    Points below ``ground_min`` (terrain such as steps) or above
    ``height_max`` are discarded; any surviving point marks its cell
    occupied. Cells that only ever saw discarded points are free; cells no
    point fell into stay unknown.
    """
    params = params or PlannerParams()
    grid = OccupancyGrid(resolution=resolution, origin=np.asarray(origin, dtype=float),
                         cells=np.full(shape, UNKNOWN, dtype=np.int8))
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    for x, y, z in pts:
        row, col = grid.cell_of((x, y))
        if not grid.in_bounds(row, col):
            continue
        if params.ground_min <= z <= params.height_max:
            grid.cells[row, col] = OCCUPIED
        elif grid.cells[row, col] == UNKNOWN:
            grid.cells[row, col] = FREE
    return grid


@dataclass
class Junction:
    """A map crossing with exit directions and crowd-appearance statistics."""

    position: np.ndarray
    exit_dirs: list                    # unit vectors
    counts: np.ndarray = None          # decayed crowd observations per exit
    last_visit: np.ndarray = None      # tick of the last traversal per exit

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.exit_dirs = [np.asarray(d, dtype=float) / np.linalg.norm(d) for d in self.exit_dirs]
        if self.counts is None:
            self.counts = np.zeros(len(self.exit_dirs))
        if self.last_visit is None:
            self.last_visit = np.full(len(self.exit_dirs), -1, dtype=int)

    def observe_crowd(self, direction) -> int:
        """Credit the exit best aligned with a crowd sighting."""
        d = np.asarray(direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0:
            return 0
        d = d / n
        idx = int(np.argmax([float(d @ e) for e in self.exit_dirs]))
        self.counts[idx] += 1.0
        return idx

    def decay(self, factor: float):
        self.counts *= factor


def patrol_direction(junction: Junction) -> int:
    """Exit index with maximal Laplace-smoothed crowd-appearance probability.

    probability_i = (count_i + 1) / (sum counts + #exits); exact ties go to
    the least recently visited exit (lowest index on a further tie).
    """
    if len(junction.exit_dirs) == 0:
        raise ValueError("junction must have at least one exit")
    counts = junction.counts
    probs = (counts + 1.0) / (counts.sum() + len(counts))
    best_p = probs.max()
    tied = [i for i, p in enumerate(probs) if p == best_p]
    return min(tied, key=lambda i: (junction.last_visit[i], i))


@dataclass
class CrowdNode:
    """One routed crowd target."""

    crowd_id: int
    location: np.ndarray
    weight: int
    deadline: int                      # tick

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float)


@dataclass
class Route:
    """An ordered crowd visit plan with its cost breakdown."""

    nodes: list = field(default_factory=list)          # CrowdNode visit order
    edge_lengths: list = field(default_factory=list)   # meters, robot->n1->n2...
    energies: list = field(default_factory=list)       # lambda * length per edge
    arrival_ticks: list = field(default_factory=list)
    cost: float = 0.0

    @property
    def total_energy(self):
        return sum(self.energies)

    @property
    def total_weight(self):
        return sum(n.weight for n in self.nodes)


def route_cost(edge_lengths, weights, lam: float) -> float:
    """Visit-plan cost: total edge energy minus collected weights minus count."""
    return lam * sum(edge_lengths) - sum(weights) - len(weights)


def route_crowds(crowds, robot_pos, clock: SimClock, speed: float,
                 params: PlannerParams | None = None) -> Route:
    """Depth-first search over ordered crowd subsets, minimizing route cost.

    Edges are straight-line distances; a partial order is pruned when a
    node's arrival time would pass its deadline, or when even collecting all
    remaining weights for free cannot beat the best cost found (admissible
    branch-and-bound). The empty route (cost 0) is always admissible.
    """
    params = params or PlannerParams()
    if not speed > 0:
        raise ValueError("speed must be positive")
    if len(crowds) > params.max_crowds:
        raise ValueError(f"routing instance exceeds max_crowds={params.max_crowds}")
    robot_pos = np.asarray(robot_pos, dtype=float)
    lam = params.energy_per_meter
    nodes = sorted(crowds, key=lambda c: c.crowd_id)
    n = len(nodes)

    best = {"cost": 0.0, "order": (), "lengths": (), "arrivals": ()}
    remaining_total = sum(c.weight + 1 for c in nodes)

    def dfs(pos, time_sec, visited, order, lengths, arrivals, partial_cost, remaining):
        # bound: finish all remaining visits with zero extra energy
        if partial_cost - remaining >= best["cost"]:
            return
        if partial_cost < best["cost"]:
            best.update(cost=partial_cost, order=tuple(order),
                        lengths=tuple(lengths), arrivals=tuple(arrivals))
        for i in range(n):
            if i in visited:
                continue
            c = nodes[i]
            length = float(np.linalg.norm(c.location - pos))
            arrival_sec = time_sec + length / speed
            arrival_tick = clock.tick + arrival_sec / clock.dt
            if arrival_tick > c.deadline:
                continue
            visited.add(i)
            order.append(i)
            lengths.append(length)
            arrivals.append(arrival_tick)
            dfs(c.location, arrival_sec, visited, order, lengths, arrivals,
                partial_cost + (lam * length - c.weight - 1),
                remaining - (c.weight + 1))
            visited.discard(i)
            order.pop()
            lengths.pop()
            arrivals.pop()

    dfs(robot_pos, 0.0, set(), [], [], [], 0.0, remaining_total)

    chosen = [nodes[i] for i in best["order"]]
    lengths = list(best["lengths"])
    return Route(
        nodes=chosen,
        edge_lengths=lengths,
        energies=[lam * L for L in lengths],
        arrival_ticks=[int(math.ceil(a)) for a in best["arrivals"]],
        cost=best["cost"],
    )


def _line_of_sight(grid: OccupancyGrid, a, b) -> bool:
    """Exact cell traversal between two world points; every touched cell
    must be free. Corner crossings conservatively require both side cells."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    row, col = grid.cell_of(a)
    row1, col1 = grid.cell_of(b)
    if not grid.is_free(row, col) or not grid.is_free(row1, col1):
        return False
    d = b - a
    step_c = 1 if d[0] >= 0 else -1
    step_r = 1 if d[1] >= 0 else -1
    if d[0] != 0:
        next_bx = grid.origin[0] + (col + (step_c > 0)) * grid.resolution
        t_max_x = (next_bx - a[0]) / d[0]
        t_dx = grid.resolution / abs(d[0])
    else:
        t_max_x, t_dx = math.inf, math.inf
    if d[1] != 0:
        next_by = grid.origin[1] + (row + (step_r > 0)) * grid.resolution
        t_max_y = (next_by - a[1]) / d[1]
        t_dy = grid.resolution / abs(d[1])
    else:
        t_max_y, t_dy = math.inf, math.inf
    limit = abs(row1 - row) + abs(col1 - col) + 4
    for _ in range(2 * limit):
        if (row, col) == (row1, col1):
            return True
        if min(t_max_x, t_max_y) > 1.0:
            return True  # segment ends inside the current (free) cell
        if abs(t_max_x - t_max_y) < 1e-12:
            # exact corner: require both adjacent side cells too
            if not (grid.is_free(row, col + step_c) and grid.is_free(row + step_r, col)):
                return False
            col += step_c
            row += step_r
            t_max_x += t_dx
            t_max_y += t_dy
        elif t_max_x < t_max_y:
            col += step_c
            t_max_x += t_dx
        else:
            row += step_r
            t_max_y += t_dy
        if not grid.is_free(row, col):
            return False
    return (row, col) == (row1, col1)


def plan_path(grid: OccupancyGrid, start, goal, smooth: bool = True) -> list[np.ndarray]:
    """Shortest 8-connected grid path, then line-of-sight shortcutting.

    Unknown cells count as obstacles. Returns world waypoints from start to
    goal; consecutive waypoints are mutually visible in free space. With
    ``smooth=False`` the raw cell-center path is returned instead.
    Raises UnreachableError when no path exists (including blocked
    endpoints).
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    s = grid.cell_of(start)
    g = grid.cell_of(goal)
    if not grid.is_free(*s) or not grid.is_free(*g):
        raise UnreachableError("start or goal cell is not free")
    if s == g:
        return [start, goal]

    moves = [(-1, -1, math.sqrt(2)), (-1, 0, 1.0), (-1, 1, math.sqrt(2)),
             (0, -1, 1.0), (0, 1, 1.0),
             (1, -1, math.sqrt(2)), (1, 0, 1.0), (1, 1, math.sqrt(2))]

    def h(cell):
        dr = abs(cell[0] - g[0])
        dc = abs(cell[1] - g[1])
        return math.sqrt(2) * min(dr, dc) + abs(dr - dc)

    open_heap = [(h(s), 0, 0.0, s)]
    g_score = {s: 0.0}
    came = {}
    counter = itertools.count(1)
    found = False
    while open_heap:
        _, _, cost, cell = heapq.heappop(open_heap)
        if cell == g:
            found = True
            break
        if cost > g_score.get(cell, math.inf):
            continue
        for dr, dc, w in moves:
            nxt = (cell[0] + dr, cell[1] + dc)
            if not grid.is_free(*nxt):
                continue
            if dr and dc:
                # no corner cutting through blocked orthogonal neighbors
                if not (grid.is_free(cell[0] + dr, cell[1]) and grid.is_free(cell[0], cell[1] + dc)):
                    continue
            tentative = cost + w
            if tentative < g_score.get(nxt, math.inf):
                g_score[nxt] = tentative
                came[nxt] = cell
                heapq.heappush(open_heap, (tentative + h(nxt), next(counter), tentative, nxt))
    if not found:
        raise UnreachableError("no grid path from start to goal")

    cells = [g]
    while cells[-1] != s:
        cells.append(came[cells[-1]])
    cells.reverse()
    waypoints = [start] + [grid.center_of(*c) for c in cells[1:-1]] + [goal]
    if not smooth:
        return waypoints

    # shortcut smoothing: greedily jump to the farthest visible waypoint
    smoothed = [waypoints[0]]
    i = 0
    while i < len(waypoints) - 1:
        j = len(waypoints) - 1
        while j > i + 1 and not _line_of_sight(grid, waypoints[i], waypoints[j]):
            j -= 1
        smoothed.append(waypoints[j])
        i = j
    return smoothed


@dataclass
class AdvisoryEvent:
    """A close-range social-distancing reminder directed at one crowd."""

    tick: int
    crowd_id: int
    distance: float
    message_id: int


class AdvisoryMonitor:
    """Tracks which crowds currently hold an active advisory.

    An advisory fires when a targeted crowd's centroid comes within the
    advisory radius and none is active for it; it expires when the robot
    retreats past radius + hysteresis or the crowd stops being targeted.
    """

    def __init__(self, params: PlannerParams | None = None):
        self.params = params or PlannerParams()
        self.active: set[int] = set()
        self._next_message = 0

    def update(self, tick: int, robot_pos, targeted) -> list[AdvisoryEvent]:
        """``targeted`` is an iterable of (crowd_id, centroid)."""
        robot_pos = np.asarray(robot_pos, dtype=float)
        radius = self.params.advisory_radius
        release = radius + self.params.advisory_hysteresis
        present = {}
        for crowd_id, centroid in targeted:
            present[crowd_id] = float(np.linalg.norm(np.asarray(centroid, dtype=float) - robot_pos))
        self.active = {
            cid for cid in self.active if cid in present and present[cid] <= release
        }
        events = []
        for cid in sorted(present):
            if present[cid] < radius and cid not in self.active:
                events.append(AdvisoryEvent(tick=tick, crowd_id=cid,
                                            distance=present[cid],
                                            message_id=self._next_message))
                self._next_message += 1
                self.active.add(cid)
        return events
