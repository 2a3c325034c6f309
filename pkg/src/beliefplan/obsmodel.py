"""Observation hypotheses and determinized costs for detection actions.

A detect is planned against a hypothesized observation: a region of belief
support around a sampled particle plus a visibility slack epsilon.  Its
determinized cost charges the expected number of retries implied by a lower
bound on the detection probability, so cheaper (more likely) detections are
preferred by the planner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .belief import ParticleBelief, SensorModel, gaussian_density, normalize
from .config import ActionCosts
from .world import Pose, Scene, forward_kinematics, segments_hit_boxes


@dataclass(frozen=True)
class SelfLoopCosts:
    """Success cost, recovery cost, and a success-probability lower bound."""

    success_cost: float
    recovery_cost: float
    p_success: float


def determinized_cost(costs: SelfLoopCosts) -> float:
    """Expected cost of retrying an action until it succeeds.

    One success plus a geometric number of recoveries: c + c' * (1/p - 1).
    A zero success probability prices the action out with infinity.
    """
    assert 0.0 <= costs.p_success <= 1.0
    if costs.p_success == 0.0:
        return math.inf
    return costs.success_cost + costs.recovery_cost * (1.0 / costs.p_success - 1.0)


@dataclass(frozen=True)
class DetectionConstants:
    p_false_negative: float
    epsilon: float
    num_movable: int


@dataclass(frozen=True)
class ObservationHypothesis:
    """A planned detection: expect the object inside `region` near `anchor`."""

    obj: str
    anchor: Pose
    region_indices: tuple[int, ...]
    region_poses: tuple[Pose, ...]
    region_mass: float
    epsilon: float

    def region_world(self, joints: dict[str, float], scene: Scene) -> np.ndarray:
        return np.array([forward_kinematics(p, joints, scene) for p in self.region_poses])


def sample_observation(pb: ParticleBelief, delta: float, epsilon: float,
                       max_hypotheses: int | None = None) -> list[ObservationHypothesis]:
    """Enumerate candidate observations, best (heaviest) anchors first.

    Each positive-weight particle anchors a delta-ball region over the
    same-frame particles around it; duplicate regions are skipped.  The
    enumeration is deterministic, one candidate per particle at most.
    """
    order = sorted(range(len(pb)), key=lambda i: (-pb.weights[i], i))
    out: list[ObservationHypothesis] = []
    seen: set[frozenset[int]] = set()
    for i in order:
        if pb.weights[i] <= 0.0:
            continue
        same = np.array([fr == pb.frames[i] for fr in pb.frames])
        near = np.linalg.norm(pb.xy - pb.xy[i], axis=1) <= delta
        members = np.where(same & near & (pb.weights > 0.0))[0]
        key = frozenset(int(j) for j in members)
        if key in seen:
            continue
        seen.add(key)
        region = tuple(Pose(pb.frames[j], (float(pb.xy[j, 0]), float(pb.xy[j, 1])))
                       for j in members)
        out.append(ObservationHypothesis(
            obj=pb.obj,
            anchor=Pose(pb.frames[i], (float(pb.xy[i, 0]), float(pb.xy[i, 1]))),
            region_indices=tuple(int(j) for j in members),
            region_poses=region,
            region_mass=float(pb.weights[members].sum()),
            epsilon=epsilon,
        ))
        if max_hypotheses is not None and len(out) >= max_hypotheses:
            break
    return out


def visibility_lower_bound(obs: ObservationHypothesis, occluder: ParticleBelief,
                           occluder_shape: tuple[float, float], joints: dict[str, float],
                           scene: Scene) -> float:
    """Worst-case (over the region) chance the occluder leaves the view clear.

    For each hypothesized target position, sum the occluder's belief mass
    over particles whose box does not cut the camera ray; take the minimum
    over the region so the bound holds wherever the target actually is.
    """
    targets = obs.region_world(joints, scene)
    centers = occluder.world_points(joints, scene)
    halves = np.tile(np.asarray(occluder_shape, dtype=float), (len(centers), 1))
    hit = segments_hit_boxes(scene.camera.origin, targets, centers, halves)  # [m, k]
    clear_mass = ((~hit) * occluder.weights[None, :]).sum(axis=1)
    return float(clear_mass.min())


def test_vis(obs: ObservationHypothesis, occluder: ParticleBelief,
             occluder_shape: tuple[float, float], joints: dict[str, float],
             scene: Scene) -> bool:
    """Certify that one occluder almost surely keeps the region visible."""
    return visibility_lower_bound(obs, occluder, occluder_shape, joints, scene) >= 1.0 - obs.epsilon


def is_b_occluded(pose_beliefs: list[tuple[str, ParticleBelief]],
                  obs: ObservationHypothesis, joints: dict[str, float],
                  scene: Scene) -> bool:
    """True iff some other object fails the per-occluder visibility test."""
    for name, pb in pose_beliefs:
        if name == obs.obj:
            continue
        if not test_vis(obs, pb, scene.object_shapes[name], joints, scene):
            return True
    return False


def region_visible(obs: ObservationHypothesis, joints: dict[str, float], scene: Scene) -> bool:
    """All hypothesized positions clear of static furniture."""
    targets = obs.region_world(joints, scene)
    centers, halves = scene.static_arrays()
    hit = segments_hit_boxes(scene.camera.origin, targets, centers, halves)
    return not bool(hit.any())


def detection_probability_bound(obs: ObservationHypothesis, consts: DetectionConstants) -> float:
    """Lower bound: no false negative, object in region, occluders clear."""
    n_others = max(consts.num_movable - 1, 0)
    return ((1.0 - consts.p_false_negative) * obs.region_mass
            * (1.0 - consts.epsilon) ** n_others)


def obs_cost(obs: ObservationHypothesis, consts: DetectionConstants,
             costs: ActionCosts) -> float:
    """Determinized price of a detect under the detection bound."""
    p = detection_probability_bound(obs, consts)
    return determinized_cost(SelfLoopCosts(costs.detect_base, costs.detect_recover, p))


def hypothesized_posterior(pb: ParticleBelief, obs: ObservationHypothesis,
                           sensor: SensorModel) -> ParticleBelief:
    """Posterior assuming the detect succeeds with a pose at the anchor.

    Computed in frame coordinates: particles outside the anchor frame are
    incompatible with the detection (no false positives) and drop to zero.
    """
    same = np.array([fr == obs.anchor.frame for fr in pb.frames], dtype=float)
    diff = pb.xy - np.asarray(obs.anchor.xy)
    like = same * gaussian_density(diff, sensor.sigma)
    return normalize(replace(pb, weights=pb.weights * like))
