"""Factored particle beliefs over object poses.

Each uncertain object carries its own weighted particle set; joints and the
robot configuration are tracked as point estimates.  Updates follow the
standard measurement model: a detection reweights by the observation density
times visibility, a miss reweights by the complement of the detection
probability.  A degenerate posterior raises, and the caller resets to a
uniform distribution over the surviving support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .world import (WORLD, Pose, RobotState, Scene, boxes_overlap,
                    forward_kinematics, segments_hit_boxes)


class DegenerateBelief(Exception):
    """Raised when an update drives every particle weight to (near) zero."""


@dataclass(frozen=True)
class SensorModel:
    sigma: float = 0.01             # std per axis of a pose observation, m
    p_false_negative: float = 0.1


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    """Weighted particles for one object; frames may differ per particle."""

    obj: str
    frames: tuple[str, ...]
    xy: np.ndarray                  # [n, 2] positions in each particle's frame
    weights: np.ndarray             # [n], nonnegative, sums to 1

    def __post_init__(self):
        self.xy.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return len(self.weights)

    def map_index(self) -> int:
        return int(np.argmax(self.weights))

    def map_particle(self) -> Pose:
        i = self.map_index()
        return Pose(self.frames[i], (float(self.xy[i, 0]), float(self.xy[i, 1])))

    def world_points(self, joints: dict[str, float], scene: Scene) -> np.ndarray:
        pts = np.array(self.xy, dtype=float)
        for fr in dict.fromkeys(self.frames):
            if fr == WORLD:
                continue
            sel = np.array([f == fr for f in self.frames])
            pts[sel] += scene.joints[fr].frame_origin(joints[fr])
        return pts


def make_belief(obj: str, frames, xy, weights) -> ParticleBelief:
    xy = np.array(xy, dtype=float).reshape(-1, 2)
    w = np.array(weights, dtype=float)
    return ParticleBelief(obj, tuple(frames), xy, w)


def point_belief(obj: str, pose: Pose) -> ParticleBelief:
    return make_belief(obj, (pose.frame,), [pose.xy], [1.0])


def normalize(pb: ParticleBelief, floor: float = 1e-12) -> ParticleBelief:
    total = float(pb.weights.sum())
    if not math.isfinite(total) or total < floor:
        raise DegenerateBelief(pb.obj)
    return replace(pb, weights=pb.weights / total)


def reset_to_support(pb: ParticleBelief) -> ParticleBelief:
    """Fall back to a uniform distribution over the current support."""
    n = len(pb)
    return replace(pb, weights=np.full(n, 1.0 / n))


def gaussian_density(diff: np.ndarray, sigma: float) -> np.ndarray:
    sq = np.sum(diff * diff, axis=-1)
    return np.exp(-0.5 * sq / (sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def visibility_mask(pb: ParticleBelief, scene: Scene, joints: dict[str, float],
                    occluders: list[tuple[np.ndarray, tuple[float, float]]]) -> np.ndarray:
    """Per-particle indicator: 1 when the camera ray is unobstructed.

    Occluders are world boxes for the other objects at their point
    estimates; static furniture is always included.
    """
    pts = pb.world_points(joints, scene)
    centers, halves = scene.static_arrays()
    if occluders:
        centers = np.vstack([centers] + [np.asarray(c, dtype=float)[None, :] for c, _ in occluders])
        halves = np.vstack([halves] + [np.asarray(h, dtype=float)[None, :] for _, h in occluders])
    hit = segments_hit_boxes(scene.camera.origin, pts, centers, halves)
    return (~hit.any(axis=1)).astype(float)


def update_detection(pb: ParticleBelief, z, sensor: SensorModel, scene: Scene,
                     joints: dict[str, float], visibility: np.ndarray) -> ParticleBelief:
    """Posterior after observing the object at world position z."""
    pts = pb.world_points(joints, scene)
    like = (1.0 - sensor.p_false_negative) * visibility * gaussian_density(pts - np.asarray(z), sensor.sigma)
    return normalize(replace(pb, weights=pb.weights * like))


def update_no_detection(pb: ParticleBelief, sensor: SensorModel,
                        visibility: np.ndarray) -> ParticleBelief:
    """Posterior after looking for the object and not seeing it."""
    like = 1.0 - (1.0 - sensor.p_false_negative) * visibility
    return normalize(replace(pb, weights=pb.weights * like))


def mass_in_region(pb: ParticleBelief, region, joints: dict[str, float], scene: Scene) -> float:
    """Probability mass whose world position falls inside a region box."""
    pts = pb.world_points(joints, scene)
    center = forward_kinematics(Pose(region.frame, region.center), joints, scene)
    he = np.asarray(region.half_extents)
    inside = np.all(np.abs(pts - center) <= he, axis=1)
    return float(pb.weights[inside].sum())


def mass_within(pb: ParticleBelief, tol: float) -> float:
    """Mass within tol of the weighted mean, restricted to the MAP frame."""
    map_frame = pb.frames[pb.map_index()]
    sel = np.array([fr == map_frame for fr in pb.frames])
    w = pb.weights[sel]
    if w.sum() <= 0.0:
        return 0.0
    mean = np.average(pb.xy[sel], axis=0, weights=w)
    near = np.linalg.norm(pb.xy[sel] - mean, axis=1) <= tol
    return float(w[near].sum())


def is_localized(pb: ParticleBelief, tol: float, confidence: float) -> bool:
    return mass_within(pb, tol) >= confidence


def effective_sample_size(pb: ParticleBelief) -> float:
    return float(1.0 / np.sum(pb.weights ** 2))


def systematic_resample(pb: ParticleBelief, rng) -> ParticleBelief:
    """Low-variance resampling; keeps n particles, uniform weights."""
    n = len(pb)
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(pb.weights), positions)
    idx = np.clip(idx, 0, n - 1)
    frames = tuple(pb.frames[i] for i in idx)
    return make_belief(pb.obj, frames, pb.xy[idx], np.full(n, 1.0 / n))


@dataclass(frozen=True)
class EnvFlags:
    """Point-estimate environment state fed back by the simulator."""

    stove_on: bool = False
    cooked: frozenset[str] = frozenset()


@dataclass
class FactoredBelief:
    poses: dict[str, ParticleBelief]
    held: tuple[str, str] | None
    joints: dict[str, float]
    robot: RobotState
    flags: EnvFlags = field(default_factory=EnvFlags)
    resets: int = 0

    def copy(self) -> "FactoredBelief":
        return FactoredBelief(dict(self.poses), self.held, dict(self.joints),
                              self.robot, self.flags, self.resets)

    def map_world_box(self, obj: str, scene: Scene) -> tuple[np.ndarray, tuple[float, float]]:
        pb = self.poses[obj]
        center = forward_kinematics(pb.map_particle(), self.joints, scene)
        return center, scene.object_shapes[obj]

    def occluders_for(self, obj: str, scene: Scene) -> list[tuple[np.ndarray, tuple[float, float]]]:
        out = []
        for name in sorted(self.poses):
            if name != obj:
                out.append(self.map_world_box(name, scene))
        return out


def transition_update(b: FactoredBelief, kind: str, **ev) -> FactoredBelief:
    """Deterministic belief transition for an executed action outcome.

    kind: move | pick | place | joint | press.  Observation-driven updates
    (detect) go through update_detection / update_no_detection instead.
    """
    b = b.copy()
    if kind == "move":
        if ev["part"] == "base":
            b.robot = RobotState(float(ev["reached"]), b.robot.arm)
        else:
            b.robot = RobotState(b.robot.base, tuple(ev["reached"]))
    elif kind == "pick":
        b.held = (ev["obj"], ev["grasp"])
        b.poses = {k: v for k, v in b.poses.items() if k != ev["obj"]}
    elif kind == "place":
        b.held = None
        b.poses = dict(b.poses)
        b.poses[ev["obj"]] = point_belief(ev["obj"], ev["pose"])
    elif kind == "joint":
        b.joints = dict(b.joints)
        b.joints[ev["joint"]] = float(ev["extension"])
    elif kind == "press":
        b.flags = EnvFlags(bool(ev["stove_on"]), b.flags.cooked | frozenset(ev.get("cooked", ())))
    else:
        raise ValueError(kind)
    return b


def mark_cooked(b: FactoredBelief, cooked) -> FactoredBelief:
    if not cooked:
        return b
    b = b.copy()
    b.flags = EnvFlags(b.flags.stove_on, b.flags.cooked | frozenset(cooked))
    return b


def uniform_over_spans(obj: str, spans: list[tuple[str, float, float, float]],
                       n: int, rng) -> ParticleBelief:
    """Uniform prior over one or more placement spans (frame, x_lo, x_hi, y).

    Particle counts split as evenly as integer division allows, so a
    two-span prior carries 0.5 mass per span up to 1/n.
    """
    counts = [n // len(spans)] * len(spans)
    for i in range(n - sum(counts)):
        counts[i] += 1
    frames, pts = [], []
    for (frame, x_lo, x_hi, y), c in zip(spans, counts):
        xs = rng.uniform(x_lo, x_hi, size=c)
        for x in xs:
            frames.append(frame)
            pts.append((float(x), y))
    return make_belief(obj, frames, pts, np.full(n, 1.0 / n))


def belief_to_dict(b: FactoredBelief) -> dict:
    return {
        "poses": {
            k: {"frames": list(pb.frames), "xy": pb.xy.tolist(), "weights": pb.weights.tolist()}
            for k, pb in sorted(b.poses.items())
        },
        "held": list(b.held) if b.held else None,
        "joints": dict(sorted(b.joints.items())),
        "robot": {"base": b.robot.base, "arm": list(b.robot.arm)},
        "flags": {"stove_on": b.flags.stove_on, "cooked": sorted(b.flags.cooked)},
        "resets": b.resets,
    }


def belief_from_dict(d: dict) -> FactoredBelief:
    poses = {
        k: make_belief(k, tuple(v["frames"]), v["xy"], v["weights"])
        for k, v in d["poses"].items()
    }
    return FactoredBelief(
        poses=poses,
        held=tuple(d["held"]) if d["held"] else None,
        joints={k: float(v) for k, v in d["joints"].items()},
        robot=RobotState(float(d["robot"]["base"]), tuple(d["robot"]["arm"])),
        flags=EnvFlags(bool(d["flags"]["stove_on"]), frozenset(d["flags"]["cooked"])),
        resets=int(d.get("resets", 0)),
    )


def collision_consistent(b: FactoredBelief, scene: Scene) -> bool:
    """MAP boxes of distinct objects must not interpenetrate."""
    boxes = [b.map_world_box(o, scene) for o in sorted(b.poses)]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if boxes_overlap(boxes[i][0], boxes[i][1], boxes[j][0], boxes[j][1]):
                return False
    return True
