"""2-D camera-plane world model.

Axis-aligned boxes on a counter, prismatic drawers that slide horizontally,
a 1-DOF base on a rail carrying a 2-DOF point end-effector, and a fixed
point camera.  All geometry is exact; occlusion is a segment-vs-box-interior
test, so tangential contact never occludes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

WORLD = "world"


@dataclass(frozen=True)
class Pose:
    """Planar position expressed in a frame: the world or a joint."""

    frame: str
    xy: tuple[float, float]

    def local(self) -> np.ndarray:
        return np.asarray(self.xy, dtype=float)


@dataclass(frozen=True)
class Box:
    center: Pose
    half_extents: tuple[float, float]


@dataclass(frozen=True)
class PrismaticJoint:
    """A drawer: a frame that translates along a fixed axis.

    The frame origin sits at the interior center when closed and moves by
    `extension * axis` as the drawer opens.  Extension lives in [0, max].
    """

    name: str
    origin: tuple[float, float]
    axis: tuple[float, float]
    max_extension: float
    interior_half_extents: tuple[float, float]

    def frame_origin(self, extension: float) -> np.ndarray:
        return np.asarray(self.origin) + extension * np.asarray(self.axis)


@dataclass(frozen=True)
class RobotState:
    base: float                      # rail coordinate
    arm: tuple[float, float]         # end-effector offset from the base origin


@dataclass(frozen=True)
class Grasp:
    name: str
    offset: tuple[float, float]      # object center relative to the end-effector


@dataclass(frozen=True)
class Camera:
    origin: tuple[float, float]


@dataclass
class LatentState:
    """Ground-truth state owned by the simulator."""

    poses: dict[str, Pose]
    joints: dict[str, float]
    robot: RobotState
    holding: tuple[str, str] | None = None   # (object, grasp name)
    stove_on: bool = False
    cooked: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class Region:
    """A named placement/goal zone, possibly attached to a joint frame."""

    name: str
    frame: str
    center: tuple[float, float]
    half_extents: tuple[float, float]


@dataclass(frozen=True)
class Button:
    name: str
    point: tuple[float, float]
    region: str                      # objects here get cooked while the stove is on


@dataclass
class Scene:
    camera: Camera
    rail_y: float
    rail_range: tuple[float, float]
    reach: float
    workspace: tuple[tuple[float, float], tuple[float, float]]   # (ax lo/hi, ay lo/hi)
    cruise_height: float
    static_boxes: dict[str, Box]
    joints: dict[str, PrismaticJoint]
    regions: dict[str, Region]
    buttons: dict[str, Button]
    object_shapes: dict[str, tuple[float, float]]
    grasps: dict[str, Grasp] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grasps:
            # one canonical top grasp per object: end-effector at the object top
            for name, (hx, hy) in sorted(self.object_shapes.items()):
                g = Grasp(name=f"g-top-{name}", offset=(0.0, -hy))
                self.grasps[g.name] = g

    def grasp_for(self, obj: str) -> Grasp:
        return self.grasps[f"g-top-{obj}"]

    def static_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        cached = getattr(self, "_static_arrays", None)
        if cached is None:
            boxes = [self.static_boxes[k] for k in sorted(self.static_boxes)]
            centers = np.array([b.center.xy for b in boxes], dtype=float)
            halves = np.array([b.half_extents for b in boxes], dtype=float)
            centers.setflags(write=False)
            halves.setflags(write=False)
            cached = self._static_arrays = (centers, halves)
        return cached

    def placement_span(self, region: str, obj: str) -> tuple[float, float, float]:
        """(x_lo, x_hi, y) in the region frame for resting an object there."""
        r = self.regions[region]
        hx, hy = self.object_shapes[obj]
        x_lo = r.center[0] - r.half_extents[0] + hx
        x_hi = r.center[0] + r.half_extents[0] - hx
        y = r.center[1] - r.half_extents[1] + hy
        return x_lo, x_hi, y


def forward_kinematics(pose: Pose, joints: dict[str, float], scene: Scene) -> np.ndarray:
    """World position of a framed pose given current joint extensions."""
    if pose.frame == WORLD:
        return pose.local()
    joint = scene.joints[pose.frame]
    return joint.frame_origin(joints[pose.frame]) + pose.local()


def to_world_box(box: Box, joints: dict[str, float], scene: Scene) -> tuple[np.ndarray, np.ndarray]:
    center = forward_kinematics(box.center, joints, scene)
    return center, np.asarray(box.half_extents, dtype=float)


def segment_hits_box(a, b, center, half_extents) -> bool:
    """True iff the open segment (a, b) meets the open interior of the box.

    Endpoints on the boundary and rays grazing a face do not count; the
    interior is open on all sides.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    lo = np.asarray(center, dtype=float) - half_extents
    hi = np.asarray(center, dtype=float) + half_extents
    t_enter, t_exit = 0.0, 1.0
    for k in range(2):
        if d[k] == 0.0:
            if not (lo[k] < a[k] < hi[k]):
                return False
            continue
        t0 = (lo[k] - a[k]) / d[k]
        t1 = (hi[k] - a[k]) / d[k]
        if t0 > t1:
            t0, t1 = t1, t0
        t_enter = max(t_enter, t0)
        t_exit = min(t_exit, t1)
    return t_enter < t_exit


def segments_hit_boxes(origin, targets: np.ndarray, centers: np.ndarray, halves: np.ndarray) -> np.ndarray:
    """Vectorized occlusion: [n_targets, n_boxes] open-interior hit matrix."""
    origin = np.asarray(origin, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(centers) == 0:
        return np.zeros((len(targets), 0), dtype=bool)
    d = targets[:, None, :] - origin[None, None, :]          # [n, 1, 2]
    lo = (centers - halves)[None, :, :] - origin[None, None, :]
    hi = (centers + halves)[None, :, :] - origin[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(d != 0.0, lo / d, -np.inf)
        t1 = np.where(d != 0.0, hi / d, np.inf)
    t_lo = np.minimum(t0, t1)
    t_hi = np.maximum(t0, t1)
    # zero-direction axes pass only if the origin coordinate is strictly inside
    degenerate = d == 0.0
    inside = (lo < 0.0) & (hi > 0.0)
    t_lo = np.where(degenerate, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(degenerate, np.where(inside, np.inf, -np.inf), t_hi)
    t_enter = np.maximum(t_lo.max(axis=2), 0.0)
    t_exit = np.minimum(t_hi.min(axis=2), 1.0)
    return t_enter < t_exit


def blocks(occluder_center, occluder_half_extents, target, camera: Camera) -> bool:
    """True iff a box at the given world pose hides the target point."""
    return segment_hits_box(camera.origin, target, occluder_center, occluder_half_extents)


def furniture_blocks(target, scene: Scene) -> bool:
    """Occlusion by static furniture (counter slab, cabinet face, shelves)."""
    centers, halves = scene.static_arrays()
    return bool(segments_hit_boxes(scene.camera.origin, np.asarray(target)[None, :], centers, halves)[0].any())


def boxes_overlap(c1, he1, c2, he2) -> bool:
    """Strict interior overlap; shared faces do not collide."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    gap = np.abs(c1 - c2) - (np.asarray(he1) + np.asarray(he2))
    return bool(np.all(gap < 0.0))


def collision_free(placements: list[tuple[np.ndarray, tuple[float, float]]]) -> bool:
    """Pairwise disjointness of world boxes."""
    for i in range(len(placements)):
        for j in range(i + 1, len(placements)):
            if boxes_overlap(placements[i][0], placements[i][1], placements[j][0], placements[j][1]):
                return False
    return True


def sample_placement(scene: Scene, region: str, obj: str, rng,
                     obstacles: list[tuple[np.ndarray, tuple[float, float]]] | None = None,
                     joints: dict[str, float] | None = None,
                     tries: int = 12) -> Pose | None:
    """Rejection-sample a resting pose in a region, avoiding given world boxes.

    Returns a pose in the region's frame, or None when the region is too
    cluttered to admit the object within the try budget.
    """
    x_lo, x_hi, y = scene.placement_span(region, obj)
    if x_hi < x_lo:
        return None
    frame = scene.regions[region].frame
    he = scene.object_shapes[obj]
    joints = joints or {}
    for _ in range(tries):
        x = rng.uniform(x_lo, x_hi)
        pose = Pose(frame, (x, y))
        center = forward_kinematics(pose, joints, scene)
        if any(boxes_overlap(center, he, oc, ohe) for oc, ohe in (obstacles or [])):
            continue
        return pose
    # rejection sampling can miss a narrow free sliver; sweep the span so a
    # feasible spot is found whenever one exists at the sweep resolution
    xs = np.linspace(x_lo, x_hi, 33)
    rng.shuffle(xs)
    for x in xs:
        pose = Pose(frame, (float(x), y))
        center = forward_kinematics(pose, joints, scene)
        if not any(boxes_overlap(center, he, oc, ohe) for oc, ohe in (obstacles or [])):
            return pose
    return None


def base_origin(scene: Scene, base: float) -> np.ndarray:
    return np.array([base, scene.rail_y], dtype=float)


def end_effector(scene: Scene, base: float, arm) -> np.ndarray:
    return base_origin(scene, base) + np.asarray(arm, dtype=float)


def reachable(scene: Scene, base: float, point) -> bool:
    """Disk reachability of a world point from a rail position."""
    return bool(np.linalg.norm(np.asarray(point) - base_origin(scene, base)) <= scene.reach)


def in_workspace(scene: Scene, arm) -> bool:
    (ax_lo, ax_hi), (ay_lo, ay_hi) = scene.workspace
    ax, ay = arm
    return ax_lo <= ax <= ax_hi and ay_lo <= ay <= ay_hi and np.hypot(ax, ay) <= scene.reach


def interpolate(q1, q2, resolution: float) -> np.ndarray:
    """Straight-line waypoints from q1 to q2 at the given spacing."""
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))
    dist = float(np.linalg.norm(q2 - q1))
    steps = max(int(np.ceil(dist / resolution)), 1)
    ts = np.linspace(0.0, 1.0, steps + 1)
    return q1[None, :] + ts[:, None] * (q2 - q1)[None, :]


def arm_waypoints(scene: Scene, q1, q2) -> list[tuple[float, float]]:
    """Retract-cruise-descend pattern used for all arm motions."""
    (x1, y1), (x2, y2) = tuple(q1), tuple(q2)
    c = scene.cruise_height
    pts = [(x1, y1)]
    if y1 != c:
        pts.append((x1, c))
    if x2 != x1:
        pts.append((x2, c))
    if pts[-1] != (x2, y2):
        pts.append((x2, y2))
    return pts


def motion_collision_free(scene: Scene, part: str, q1, q2,
                          base: float | None = None,
                          resolution: float = 0.01,
                          carried_half_extents: tuple[float, float] | None = None,
                          carried_offset: tuple[float, float] | None = None) -> bool:
    """Interpolated clearance check for a commanded motion.

    The base rides a clear rail below the furniture, so base motions only
    check rail limits.  Arm motions follow a retract-cruise-descend polyline
    in offset coordinates; with the base position known the polyline is
    interpolated in world coordinates at the given resolution and every
    sample (plus a carried box, if any) must miss the static furniture.
    """
    if part == "base":
        lo, hi = scene.rail_range
        return bool(lo <= min(q1, q2) and max(q1, q2) <= hi)
    waypoints = arm_waypoints(scene, q1, q2)
    for wp in waypoints:
        if not in_workspace(scene, wp):
            return False
    if base is None:
        return True
    centers, halves = scene.static_arrays()
    origin = base_origin(scene, base)
    off = np.asarray(carried_offset if carried_offset is not None else (0.0, 0.0))
    for a, b in zip(waypoints, waypoints[1:]):
        for q in interpolate(a, b, resolution):
            p = origin + q
            inside = np.all(np.abs(p - centers) < halves, axis=1)
            if bool(inside.any()):
                return False
            if carried_half_extents is not None:
                c = p + off
                if any(boxes_overlap(c, carried_half_extents, bc, bh)
                       for bc, bh in zip(centers, halves)):
                    return False
    return True


def segment_clear(a, b, boxes: list[tuple[np.ndarray, tuple[float, float]]]) -> bool:
    """True when the open segment (a, b) misses every box interior."""
    return not any(segment_hits_box(a, b, c, he) for c, he in boxes)


def scene_from_dict(data: dict) -> Scene:
    statics = {
        name: Box(Pose(WORLD, tuple(b["center"])), tuple(b["half_extents"]))
        for name, b in data["static_boxes"].items()
    }
    joints = {
        name: PrismaticJoint(name, tuple(j["origin"]), tuple(j["axis"]),
                             float(j["max_extension"]), tuple(j["interior_half_extents"]))
        for name, j in data["joints"].items()
    }
    regions = {
        name: Region(name, r["frame"], tuple(r["center"]), tuple(r["half_extents"]))
        for name, r in data["regions"].items()
    }
    buttons = {
        name: Button(name, tuple(b["point"]), b["region"])
        for name, b in data.get("buttons", {}).items()
    }
    return Scene(
        camera=Camera(tuple(data["camera"])),
        rail_y=float(data["rail"]["y"]),
        rail_range=tuple(data["rail"]["range"]),
        reach=float(data["arm"]["reach"]),
        workspace=(tuple(data["arm"]["workspace"][0]), tuple(data["arm"]["workspace"][1])),
        cruise_height=float(data["arm"]["cruise_height"]),
        static_boxes=statics,
        joints=joints,
        regions=regions,
        buttons=buttons,
        object_shapes={k: tuple(v) for k, v in data["objects"].items()},
    )


def load_scene(path: str | None = None) -> Scene:
    """Load a scene description file; defaults to the bundled desk scene."""
    if path is None:
        text = resources.files("beliefplan").joinpath("scenes/desk.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return scene_from_dict(json.loads(text))
