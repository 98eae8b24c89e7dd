"""patrolsim: deterministic 2D social-distancing patrol-robot simulator.

Submodules
----------
core        shared value types (clock, pedestrian state, RNG streams, geometry)
frvo        frontal reciprocal velocity-obstacle crowd motion
sensing     simulated 4-camera rig, range scans, RANSAC range fusion
tracker     appearance+IoU multi-object tracker with track lifecycle
socialgraph distance-classified pedestrian graph and crowd extraction
planner     occupancy projection, patrol/junction policy, crowd routing, paths
localnav    2D scan synthesis and the reactive collision-avoidance policy
engine      scenario loading, tick loop, replay logs, metrics
"""

from .core import BBox, PedestrianState, Pose, RngStreams, SimClock, normalize_angle, vec2

__all__ = [
    "BBox",
    "PedestrianState",
    "Pose",
    "RngStreams",
    "SimClock",
    "normalize_angle",
    "vec2",
]

__version__ = "0.1.0"
