"""Drawer-and-counter manipulation domain over belief states.

Determinization turns a factored belief into a deterministic planning
problem: pose beliefs become opaque values, detects become actions whose
cost charges expected retries, and continuous choices (placements, base
positions, kinematics, motions, observations) enter through streams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import obsmodel, world
from .belief import (DegenerateBelief, FactoredBelief, ParticleBelief,
                     SensorModel, is_localized, mass_in_region, point_belief)
from .config import Config
from .obsmodel import (DetectionConstants, ObservationHypothesis, SelfLoopCosts,
                       determinized_cost, hypothesized_posterior,
                       sample_observation)
from .planlang import (ActionSchema, And, CondEffect, Const, DerivedPredicate,
                       EvalContext, Fact, Lit, Num, OptValue, Opaque, Problem,
                       StreamSchema, ValueFactory, fact)
from .world import Pose, Scene, forward_kinematics

BASE = Const("base")
ARM = Const("arm")
NO_JOINT = Const("none")
ZERO = Num((0.0,))

APPROACH = 0.12        # m, vertical pre-grasp standoff checked for clearance
REACH_WINDOW = 0.3     # m, base sampling window around a manipulation target


def _frame_accessible(scene: "Scene", jname: str, ext: float) -> bool:
    """Whether a top-down approach into the joint's interior clears the
    furniture at this extension.  Gates manipulation inside closed drawers."""
    joint = scene.joints[jname]
    origin = joint.frame_origin(ext)
    hx, hy = joint.interior_half_extents
    ytop = origin[1] + hy
    centers, halves = scene.static_arrays()
    for x in (origin[0] - hx, origin[0], origin[0] + hx):
        start = np.array([x, ytop + APPROACH])
        end = np.array([[x, ytop]])
        if world.segments_hit_boxes(start, end, centers, halves)[0].any():
            return False
    return True


@dataclass(frozen=True)
class GoalSpec:
    """Belief-level goal: containment confidence, joint targets, cooked set."""

    bin_goals: tuple = ()       # (obj, region, confidence)
    joint_goals: tuple = ()     # (joint, extension, tolerance)
    cooked_goals: tuple = ()    # obj names
    hand_empty: bool = False


def evaluate_goal(b: FactoredBelief, goal: GoalSpec, scene: Scene, cfg: Config) -> bool:
    """Check a goal directly against a belief; used for trial verdicts."""
    for obj, region, conf in goal.bin_goals:
        pb = b.poses.get(obj)
        if pb is None or mass_in_region(pb, scene.regions[region], b.joints, scene) < conf:
            return False
    for joint, ext, tol in goal.joint_goals:
        if abs(b.joints[joint] - ext) > tol:
            return False
    for obj in goal.cooked_goals:
        if obj not in b.flags.cooked:
            return False
    if goal.hand_empty and b.held is not None:
        return False
    return True


def compile_goal(goal: GoalSpec) -> And:
    parts = []
    for obj, region, conf in goal.bin_goals:
        parts.append(Lit(fact("BIn", Const(obj), Const(region), Num((conf,)))))
    for joint, ext, tol in goal.joint_goals:
        parts.append(Lit(fact("JointNear", Const(joint), Num((ext,)), Num((tol,)))))
    for obj in goal.cooked_goals:
        parts.append(Lit(fact("Cooked", Const(obj))))
    if goal.hand_empty:
        parts.append(Lit(fact("HandEmpty")))
    return And(tuple(parts))


# ---------------------------------------------------------------------------
# state parsing helpers shared by the programmatic predicates

def state_joints(state, scene: Scene) -> dict[str, float]:
    joints = {}
    for f in state:
        if f.pred == "AtAngle" and f.args[0] != NO_JOINT:
            joints[f.args[0].name] = f.args[1].data[0]
    for name in scene.joints:
        joints.setdefault(name, 0.0)
    return joints


def state_pose_beliefs(state) -> list[tuple[str, object]]:
    out = [(f.args[0].name, f.args[1]) for f in state if f.pred == "AtPoseB"]
    return sorted(out, key=lambda t: t[0])


def _real(v) -> bool:
    return isinstance(v, Opaque)


def _map_world_box(pb: ParticleBelief, shape, joints, scene) -> tuple[np.ndarray, tuple]:
    return forward_kinematics(pb.map_particle(), joints, scene), shape


def grasp_target(pb: ParticleBelief) -> Pose:
    """Grasp aim point: weighted mean over the dominant frame."""
    frame = pb.frames[pb.map_index()]
    sel = np.array([fr == frame for fr in pb.frames])
    w = pb.weights[sel]
    mean = np.average(pb.xy[sel], axis=0, weights=w)
    return Pose(frame, (float(mean[0]), float(mean[1])))


# ---------------------------------------------------------------------------
# determinization

def determinize(b: FactoredBelief, goal: GoalSpec, scene: Scene, cfg: Config,
                vf: ValueFactory | None = None, extra_static=(), rng=None) -> Problem:
    """Build the deterministic optimistic-planning problem for a belief."""
    vf = vf or ValueFactory()
    rng = rng or np.random.default_rng(0)
    costs = cfg.costs
    act = lambda c: determinized_cost(SelfLoopCosts(c, c, costs.actuation_p))
    n_movable = len(b.poses) + (1 if b.held else 0)
    sensor = SensorModel(cfg.noise.sensor_sigma, cfg.noise.p_false_negative)

    init: set[Fact] = set()
    static: list[Fact] = []
    belief_values: dict[str, Opaque] = {}

    bq0 = Num((float(b.robot.base),))
    aq0 = Num((float(b.robot.arm[0]), float(b.robot.arm[1])))
    init.add(fact("AtConf", BASE, bq0))
    init.add(fact("AtConf", ARM, aq0))
    static += [fact("BConf", bq0), fact("AConf", aq0)]

    init.add(fact("AtAngle", NO_JOINT, ZERO))
    static.append(fact("AngleVal", NO_JOINT, ZERO))
    static.append(fact("FrameAccess", NO_JOINT, ZERO))
    for name in sorted(scene.joints):
        j = Const(name)
        cur = Num((float(b.joints[name]),))
        init.add(fact("AtAngle", j, cur))
        vals = [ZERO, Num((scene.joints[name].max_extension,)), cur]
        for a in [v for i, v in enumerate(vals) if v not in vals[:i]]:
            static.append(fact("AngleVal", j, a))
            if _frame_accessible(scene, name, a.data[0]):
                static.append(fact("FrameAccess", j, a))

    frame_const = lambda fr: NO_JOINT if fr == world.WORLD else Const(fr)
    for name in sorted(b.poses):
        pb = b.poses[name]
        v = vf.opaque("belief", pb)
        belief_values[name] = v
        o = Const(name)
        init.add(fact("AtPoseB", o, v))
        static += [fact("PoseB", o, v), fact("Graspable", o),
                   fact("FrameOf", v, frame_const(pb.frames[pb.map_index()]))]
    if b.held is not None:
        obj, grasp = b.held
        init.add(fact("AtGrasp", Const(obj), Const(grasp)))
        static.append(fact("Graspable", Const(obj)))
        # The spot under the gripper is a legal placement right now.  Expose
        # it as a real, localized pose belief with kinematic witnesses at the
        # current configuration, so a replan that is already hovering over a
        # region can open directly with place instead of re-sampling a target
        # and chasing it with fresh motions every episode.
        ee = world.end_effector(scene, b.robot.base, b.robot.arm)
        center = ee + np.asarray(scene.grasp_for(obj).offset)
        centers, halves = scene.static_arrays()
        retreat_clear = not bool(world.segments_hit_boxes(
            ee + np.array([0.0, APPROACH]), ee[None, :], centers, halves)[0].any())
        for rname in sorted(scene.regions) if retreat_clear else []:
            region = scene.regions[rname]
            rc = forward_kinematics(Pose(region.frame, region.center), b.joints, scene)
            if np.any(np.abs(center - rc) > np.asarray(region.half_extents)):
                continue
            fr = region.frame
            local = center if fr == world.WORLD else \
                center - scene.joints[fr].frame_origin(b.joints[fr])
            pbh = vf.opaque("belief", point_belief(
                obj, Pose(fr, (float(local[0]), float(local[1])))))
            o, g, r = Const(obj), Const(grasp), Const(rname)
            j = frame_const(fr)
            a = ZERO if fr == world.WORLD else Num((float(b.joints[fr]),))
            static += [fact("Placement", o, pbh, r), fact("PoseB", o, pbh),
                       fact("BInR", o, pbh, r), fact("FrameOf", pbh, j),
                       fact("Localized", o, pbh),
                       fact("Reach", o, pbh, g, bq0, j, a),
                       fact("Kin", o, pbh, g, bq0, aq0, j, a),
                       fact("ArmTarget", aq0, bq0)]
    else:
        init.add(fact("HandEmpty"))

    if b.flags.stove_on:
        init.add(fact("StoveOn"))
    for obj in sorted(b.flags.cooked):
        init.add(fact("Cooked", Const(obj)))

    for r in sorted(scene.regions):
        static.append(fact("PlaceRegion", Const(r)))
    for btn in sorted(scene.buttons):
        static.append(fact("Button", Const(btn)))

    seen = set()
    ordered_static = []
    for f in static + list(extra_static):
        if f not in seen:
            seen.add(f)
            ordered_static.append(f)

    ctx = EvalContext(static=set(ordered_static))
    caches: dict = {"vis": {}, "occ": {}, "binr": {}, "bin": {}}

    # ---- programmatic predicates -----------------------------------------

    def joints_sig(state):
        return tuple(sorted((f.args[0].name, f.args[1].data)
                            for f in state if f.pred == "AtAngle" and f.args[0] != NO_JOINT))

    def t_region_visible(state, args):
        _, obs_v = args
        if not _real(obs_v):
            return None
        key = (obs_v.uid, joints_sig(state))
        if key not in caches["vis"]:
            caches["vis"][key] = obsmodel.region_visible(
                obs_v.payload, state_joints(state, scene), scene)
        return caches["vis"][key]

    def t_b_occluded(state, args):
        _, obs_v = args
        if not _real(obs_v):
            return None
        others = [(o, pv) for o, pv in state_pose_beliefs(state) if _real(pv)]
        key = (obs_v.uid, tuple((o, pv.uid) for o, pv in others), joints_sig(state))
        if key not in caches["occ"]:
            caches["occ"][key] = obsmodel.is_b_occluded(
                [(o, pv.payload) for o, pv in others], obs_v.payload,
                state_joints(state, scene), scene)
        return caches["occ"][key]

    def t_bin(state, args):
        o, r, conf = args
        for name, pv in state_pose_beliefs(state):
            if name == o.name:
                if not _real(pv):
                    if pv not in caches["binr"]:
                        caches["binr"][pv] = {f.args[2] for f in ctx.static
                                              if f.pred == "BInR" and f.args[1] == pv}
                    known = caches["binr"][pv]
                    # a placement's region is fully determined; only values
                    # with no region certificate stay optimistically open
                    return r in known if known else None
                key = (pv.uid, r, joints_sig(state))
                if key not in caches["bin"]:
                    caches["bin"][key] = mass_in_region(
                        pv.payload, scene.regions[r.name],
                        state_joints(state, scene), scene)
                return caches["bin"][key] >= conf.data[0]
        return False

    def t_joint_near(state, args):
        j, e, tol = args
        for f in state:
            if f.pred == "AtAngle" and f.args[0] == j:
                return abs(f.args[1].data[0] - e.data[0]) <= tol.data[0]
        return False

    def t_place_free(state, args):
        o, pv = args
        if not _real(pv):
            return None
        joints = state_joints(state, scene)
        box = _map_world_box(pv.payload, scene.object_shapes[o.name], joints, scene)
        for name, other in state_pose_beliefs(state):
            if name == o.name or not _real(other):
                continue
            ob = _map_world_box(other.payload, scene.object_shapes[name], joints, scene)
            if world.boxes_overlap(box[0], box[1], ob[0], ob[1]):
                return False
        return True

    def t_can_push(state, args):
        j, a2 = args
        joints = state_joints(state, scene)
        joints[j.name] = a2.data[0]
        centers, halves = scene.static_arrays()
        for name, pv in state_pose_beliefs(state):
            if not _real(pv):
                continue
            pb = pv.payload
            if pb.frames[pb.map_index()] != j.name:
                continue
            c, he = _map_world_box(pb, scene.object_shapes[name], joints, scene)
            if any(world.boxes_overlap(c, he, bc, bh) for bc, bh in zip(centers, halves)):
                return False
        return True

    ctx.tests = {
        "RegionVisible": t_region_visible,
        "BOccluded": t_b_occluded,
        "BIn": t_bin,
        "JointNear": t_joint_near,
        "PlaceFree": t_place_free,
        "CanPush": t_can_push,
    }

    # ---- action schemata ---------------------------------------------------

    def detect_cost(binding, support):
        obs_v = binding["?obs"]
        if isinstance(obs_v, OptValue):
            return costs.detect_base
        obs: ObservationHypothesis = obs_v.payload
        consts = DetectionConstants(cfg.noise.p_false_negative, obs.epsilon, n_movable)
        return obsmodel.obs_cost(obs, consts, costs)

    stove_regions = sorted({btn.region for btn in scene.buttons.values()})

    def on_stove_region(o: Const, pv) -> bool:
        if any(fact("BInR", o, pv, Const(r)) in ctx.static for r in stove_regions):
            return True
        if _real(pv):
            return any(mass_in_region(pv.payload, scene.regions[r], b.joints, scene)
                       >= cfg.goal_confidence for r in stove_regions)
        return False

    def place_cond_effects(binding):
        o, pv = binding["?o"], binding["?pb"]
        if on_stove_region(o, pv):
            return (CondEffect(requires=(fact("StoveOn"),), adds=(fact("Cooked", o),)),)
        return ()

    def press_cond_effects(binding):
        effects = []
        for f in sorted((f for f in ctx.static if f.pred == "PoseB"), key=repr):
            o, pv = f.args
            if on_stove_region(o, pv):
                effects.append(CondEffect(requires=(fact("AtPoseB", o, pv),),
                                          adds=(fact("Cooked", o),)))
        return tuple(effects)

    schemas = (
        ActionSchema(
            name="move-base", params=("?q1", "?t", "?q2"),
            static_pre=(("MotionB", "?q1", "?t", "?q2"),),
            fluent_pre=(("AtConf", BASE, "?q1"),),
            adds=(("AtConf", BASE, "?q2"),), dels=(("AtConf", BASE, "?q1"),),
            cost_fn=lambda b_, s_: act(costs.move_base), transit=True),
        ActionSchema(
            name="move-arm", params=("?q1", "?t", "?q2", "?bq"),
            static_pre=(("MotionA", "?q1", "?t", "?q2", "?bq"),),
            fluent_pre=(("AtConf", ARM, "?q1"), ("AtConf", BASE, "?bq")),
            adds=(("AtConf", ARM, "?q2"),), dels=(("AtConf", ARM, "?q1"),),
            cost_fn=lambda b_, s_: act(costs.move_arm), transit=True),
        ActionSchema(
            name="pick", params=("?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
            static_pre=(("Kin", "?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
                        ("Localized", "?o", "?pb")),
            fluent_pre=(("AtPoseB", "?o", "?pb"), ("HandEmpty",),
                        ("AtConf", BASE, "?bq"), ("AtConf", ARM, "?aq"),
                        ("AtAngle", "?j", "?a")),
            adds=(("AtGrasp", "?o", "?g"),),
            dels=(("AtPoseB", "?o", "?pb"), ("HandEmpty",)),
            cost_fn=lambda b_, s_: act(costs.manip)),
        ActionSchema(
            name="place", params=("?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
            static_pre=(("Kin", "?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
                        ("Placement", "?o", "?pb", "?r")),
            fluent_pre=(("AtGrasp", "?o", "?g"), ("AtConf", BASE, "?bq"),
                        ("AtConf", ARM, "?aq"), ("AtAngle", "?j", "?a")),
            test_pre=((False, "PlaceFree", "?o", "?pb"),),
            adds=(("AtPoseB", "?o", "?pb"), ("HandEmpty",)),
            dels=(("AtGrasp", "?o", "?g"),),
            cost_fn=lambda b_, s_: act(costs.manip),
            cond_effects_fn=place_cond_effects),
        ActionSchema(
            name="pull", params=("?j", "?a1", "?a2", "?bq"),
            static_pre=(("PullKin", "?j", "?a1", "?a2", "?bq"),),
            fluent_pre=(("AtAngle", "?j", "?a1"), ("AtConf", BASE, "?bq"), ("HandEmpty",)),
            adds=(("AtAngle", "?j", "?a2"),), dels=(("AtAngle", "?j", "?a1"),),
            guard=lambda b_, s_: b_["?a2"].data[0] > b_["?a1"].data[0],
            cost_fn=lambda b_, s_: act(costs.manip)),
        ActionSchema(
            name="push", params=("?j", "?a1", "?a2", "?bq"),
            static_pre=(("PullKin", "?j", "?a1", "?a2", "?bq"),),
            fluent_pre=(("AtAngle", "?j", "?a1"), ("AtConf", BASE, "?bq"), ("HandEmpty",)),
            test_pre=((False, "CanPush", "?j", "?a2"),),
            adds=(("AtAngle", "?j", "?a2"),), dels=(("AtAngle", "?j", "?a1"),),
            guard=lambda b_, s_: b_["?a2"].data[0] < b_["?a1"].data[0],
            cost_fn=lambda b_, s_: act(costs.manip)),
        ActionSchema(
            name="detect", params=("?o", "?pb1", "?obs", "?pb2"),
            static_pre=(("BeliefUpdate", "?o", "?pb1", "?obs", "?pb2"),),
            fluent_pre=(("AtPoseB", "?o", "?pb1"),),
            test_pre=((True, "BOccluded", "?o", "?obs"),
                      (False, "RegionVisible", "?o", "?obs")),
            adds=(("AtPoseB", "?o", "?pb2"),), dels=(("AtPoseB", "?o", "?pb1"),),
            cost_fn=detect_cost),
        ActionSchema(
            name="press-on", params=("?b", "?bq"),
            static_pre=(("PressKin", "?b", "?bq"),),
            fluent_pre=(("AtConf", BASE, "?bq"),),
            neg_pre=(("StoveOn",),),
            adds=(("StoveOn",),),
            cost_fn=lambda b_, s_: act(costs.manip),
            cond_effects_fn=press_cond_effects),
        ActionSchema(
            name="press-off", params=("?b", "?bq"),
            static_pre=(("PressKin", "?b", "?bq"),),
            fluent_pre=(("AtConf", BASE, "?bq"), ("StoveOn",)),
            dels=(("StoveOn",),),
            cost_fn=lambda b_, s_: act(costs.manip)),
    )

    derived = (
        DerivedPredicate("BOccluded", ("?o", "?obs"),
                         "some other object's pose belief may block the region"),
        DerivedPredicate("RegionVisible", ("?o", "?obs"),
                         "every region point clears the static furniture"),
        DerivedPredicate("BIn", ("?o", "?region", "?conf"),
                         "belief mass inside the region meets the confidence"),
        DerivedPredicate("JointNear", ("?j", "?ext", "?tol"),
                         "joint extension within tolerance of the target"),
        DerivedPredicate("PlaceFree", ("?o", "?pb"),
                         "point-estimate box overlaps no other object"),
        DerivedPredicate("CanPush", ("?j", "?a"),
                         "attached objects fit the furniture at the target extension"),
    )

    streams = build_streams(b, scene, cfg, sensor, rng)
    problem = Problem(
        init=frozenset(init),
        goal=compile_goal(goal),
        schemas=schemas,
        streams=streams[0],
        derived=derived,
        ctx=ctx,
        max_cost=cfg.planner.max_cost,
        stream_fns=streams[1],
        meta={"belief_values": belief_values, "n_movable": n_movable,
              "scene": scene, "cfg": cfg, "goal_spec": goal, "vf": vf,
              "static_order": tuple(ordered_static)},
    )
    return problem


# ---------------------------------------------------------------------------
# streams

def build_streams(b: FactoredBelief, scene: Scene, cfg: Config,
                  sensor: SensorModel, rng) -> tuple[tuple[StreamSchema, ...], dict]:
    """Stream schemata plus generator factories bound to this episode."""

    def frame_const(fr):
        return NO_JOINT if fr == world.WORLD else Const(fr)

    def world_target(pb: ParticleBelief, j: Const, a: Num) -> np.ndarray:
        aim = grasp_target(pb)
        joints = dict(b.joints)
        if j != NO_JOINT:
            joints[j.name] = a.data[0]
        return forward_kinematics(aim, joints, scene)

    def ee_for(obj: str, target: np.ndarray) -> np.ndarray:
        offset = np.asarray(scene.grasp_for(obj).offset)
        return target - offset

    def approach_clear(ee: np.ndarray) -> bool:
        start = ee + np.array([0.0, APPROACH])
        centers, halves = scene.static_arrays()
        return not bool(world.segments_hit_boxes(start, ee[None, :], centers, halves)[0].any())

    def gen_grasps(o: Const):
        yield (Const(scene.grasp_for(o.name).name),)

    def gen_sample_place(o: Const, r: Const):
        obstacles = b.occluders_for(o.name, scene)
        joints = dict(b.joints)
        while True:
            pose = world.sample_placement(scene, r.name, o.name, rng,
                                          obstacles=obstacles, joints=joints)
            if pose is None:
                return
            yield (("belief", point_belief(o.name, pose)),)

    def base_works(bq: float, ee: np.ndarray) -> bool:
        # mirror the kinematics stream's feasibility so a Reach certificate
        # never points at a base the arm solver will reject
        return (world.in_workspace(scene, ee - world.base_origin(scene, bq))
                and world.reachable(scene, bq, ee + [0, APPROACH]))

    def arm_can_travel(bq: float, ee: np.ndarray) -> bool:
        # proposing the robot's own base is only useful when the arm can
        # actually move from where it is to the grasp target at that base
        aq = ee - world.base_origin(scene, bq)
        return world.motion_collision_free(scene, "arm", b.robot.arm, aq,
                                           base=bq, resolution=cfg.motion_resolution)

    def gen_inv_reach(o: Const, pb, g: Const, j: Const, a: Num):
        target = world_target(pb.payload, j, a)
        ee = ee_for(o.name, target)
        if not approach_clear(ee):
            return
        cur = float(b.robot.base)
        if base_works(cur, ee) and arm_can_travel(cur, ee):
            yield (Num((cur,)),)
        lo, hi = scene.rail_range
        for _ in range(16):
            bq = float(rng.uniform(max(lo, ee[0] - REACH_WINDOW), min(hi, ee[0] + REACH_WINDOW)))
            if base_works(bq, ee):
                yield (Num((bq,)),)

    def gen_inv_kin(o: Const, pb, g: Const, bq: Num, j: Const, a: Num):
        target = world_target(pb.payload, j, a)
        ee = ee_for(o.name, target)
        if not approach_clear(ee):
            return
        cur_ee = world.end_effector(scene, b.robot.base, b.robot.arm)
        if (abs(b.robot.base - bq.data[0]) < 1e-12
                and float(np.linalg.norm(cur_ee - ee)) <= 0.9 * cfg.grasp_tol):
            yield (Num((float(b.robot.arm[0]), float(b.robot.arm[1]))),)
        aq = ee - world.base_origin(scene, bq.data[0])
        if world.in_workspace(scene, aq):
            yield (Num((float(aq[0]), float(aq[1]))),)

    def gen_motion_base(q1: Num, q2: Num):
        if world.motion_collision_free(scene, "base", q1.data[0], q2.data[0],
                                       resolution=cfg.motion_resolution):
            yield (("traj", (q1.data, q2.data)),)

    def gen_motion_arm(q1: Num, q2: Num, bq: Num):
        if world.motion_collision_free(scene, "arm", q1.data, q2.data,
                                       base=bq.data[0], resolution=cfg.motion_resolution):
            yield (("traj", tuple(world.arm_waypoints(scene, q1.data, q2.data))),)

    def handle_point(j: Const, a: Num) -> np.ndarray:
        joint = scene.joints[j.name]
        off = np.array([-(joint.interior_half_extents[0] + 0.02), 0.0])
        return joint.frame_origin(a.data[0]) + off

    def gen_sample_pull(j: Const, a1: Num, a2: Num):
        h1, h2 = handle_point(j, a1), handle_point(j, a2)
        cur = float(b.robot.base)
        candidates = []
        if world.reachable(scene, cur, h1) and world.reachable(scene, cur, h2):
            candidates.append(cur)
        lo, hi = scene.rail_range
        mid = 0.5 * (h1[0] + h2[0])
        for _ in range(16):
            candidates.append(float(rng.uniform(max(lo, mid - 0.35), min(hi, mid + 0.35))))
        for bq in candidates:
            if world.reachable(scene, bq, h1) and world.reachable(scene, bq, h2):
                yield (Num((bq,)),)

    def gen_sample_press(btn: Const):
        point = np.asarray(scene.buttons[btn.name].point)
        cur = float(b.robot.base)
        candidates = []
        if world.reachable(scene, cur, point):
            candidates.append(cur)
        lo, hi = scene.rail_range
        for _ in range(16):
            candidates.append(float(rng.uniform(max(lo, point[0] - REACH_WINDOW),
                                                min(hi, point[0] + REACH_WINDOW))))
        for bq in candidates:
            if world.reachable(scene, bq, point):
                yield (Num((bq,)),)

    def gen_pull_here(j: Const, a1: Num, a2: Num):
        h1, h2 = handle_point(j, a1), handle_point(j, a2)
        cur = float(b.robot.base)
        if world.reachable(scene, cur, h1) and world.reachable(scene, cur, h2):
            yield (Num((cur,)),)

    def gen_press_here(btn: Const):
        point = np.asarray(scene.buttons[btn.name].point)
        cur = float(b.robot.base)
        if world.reachable(scene, cur, point):
            yield (Num((cur,)),)

    def gen_reach_here(o: Const, pb, g: Const, j: Const, a: Num):
        target = world_target(pb.payload, j, a)
        ee = ee_for(o.name, target)
        if not approach_clear(ee):
            return
        cur = float(b.robot.base)
        if base_works(cur, ee) and arm_can_travel(cur, ee):
            yield (Num((cur,)),)

    def gen_kin_here(o: Const, pb, g: Const, bq: Num, j: Const, a: Num):
        target = world_target(pb.payload, j, a)
        ee = ee_for(o.name, target)
        if not approach_clear(ee):
            return
        cur_ee = world.end_effector(scene, b.robot.base, b.robot.arm)
        if float(np.linalg.norm(cur_ee - ee)) <= 0.9 * cfg.grasp_tol:
            yield (Num((float(b.robot.arm[0]), float(b.robot.arm[1]))),)

    def gen_sample_obs(o: Const, pb):
        for h in sample_observation(pb.payload, cfg.delta, cfg.epsilon,
                                    cfg.planner.max_obs_hypotheses):
            yield (("obs", h),)

    def gen_update_belief(o: Const, pb, obs):
        try:
            post = hypothesized_posterior(pb.payload, obs.payload, sensor)
        except DegenerateBelief:
            return
        yield (("belief", post),)

    def gen_test_localized(o: Const, pb):
        if is_localized(pb.payload, cfg.grasp_tol, cfg.goal_confidence):
            yield ()

    def region_frame(binding):
        return frame_const(scene.regions[binding["?r"].name].frame)

    hypo_depth: dict[int, int] = {}   # posterior uid -> hypothesized detects so far

    def hook_update(binding, outputs):
        pb_v, post_v = binding["?pb"], outputs[0]
        hypo_depth[post_v.uid] = hypo_depth.get(getattr(pb_v, "uid", None), 0) + 1
        pb = post_v.payload
        return [fact("FrameOf", post_v, frame_const(pb.frames[pb.map_index()]))]

    schemas = (
        StreamSchema("grasps", ("?o",), (("Graspable", "?o"),), ("?g",),
                     (("Grasp", "?o", "?g"),), output_kinds=("grasp",),
                     once=True, eager=True),
        StreamSchema("sample-place", ("?o", "?r"),
                     (("Graspable", "?o"), ("PlaceRegion", "?r")),
                     ("?pb",),
                     (("Placement", "?o", "?pb", "?r"), ("PoseB", "?o", "?pb"),
                      ("BInR", "?o", "?pb", "?r"), ("FrameOf", "?pb", region_frame),
                      ("Localized", "?o", "?pb")),
                     output_kinds=("belief",)),
        # "-here" streams certify the robot's current configuration as a
        # kinematic witness, so a plan tail can start without a move first
        StreamSchema("reach-here", ("?o", "?pb", "?g", "?j", "?a"),
                     (("PoseB", "?o", "?pb"), ("Grasp", "?o", "?g"),
                      ("FrameOf", "?pb", "?j"), ("AngleVal", "?j", "?a"),
                      ("FrameAccess", "?j", "?a"), ("Localized", "?o", "?pb")),
                     ("?bq",),
                     (("Reach", "?o", "?pb", "?g", "?bq", "?j", "?a"), ("BConf", "?bq")),
                     output_kinds=("bconf",), eager=True),
        StreamSchema("kin-here", ("?o", "?pb", "?g", "?bq", "?j", "?a"),
                     (("Reach", "?o", "?pb", "?g", "?bq", "?j", "?a"),),
                     ("?aq",),
                     (("Kin", "?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
                      ("AConf", "?aq"), ("ArmTarget", "?aq", "?bq")),
                     output_kinds=("aconf",), eager=True),
        StreamSchema("pull-here", ("?j", "?a1", "?a2"),
                     (("AngleVal", "?j", "?a1"), ("AngleVal", "?j", "?a2")),
                     ("?bq",),
                     (("PullKin", "?j", "?a1", "?a2", "?bq"), ("BConf", "?bq")),
                     output_kinds=("bconf",), eager=True),
        StreamSchema("press-here", ("?b",),
                     (("Button", "?b"),),
                     ("?bq",), (("PressKin", "?b", "?bq"), ("BConf", "?bq")),
                     output_kinds=("bconf",), eager=True),
        StreamSchema("inv-reach", ("?o", "?pb", "?g", "?j", "?a"),
                     (("PoseB", "?o", "?pb"), ("Grasp", "?o", "?g"),
                      ("FrameOf", "?pb", "?j"), ("AngleVal", "?j", "?a"),
                      ("FrameAccess", "?j", "?a"), ("Localized", "?o", "?pb")),
                     ("?bq",),
                     (("Reach", "?o", "?pb", "?g", "?bq", "?j", "?a"), ("BConf", "?bq")),
                     output_kinds=("bconf",)),
        StreamSchema("inv-kin", ("?o", "?pb", "?g", "?bq", "?j", "?a"),
                     (("Reach", "?o", "?pb", "?g", "?bq", "?j", "?a"),),
                     ("?aq",),
                     (("Kin", "?o", "?pb", "?g", "?bq", "?aq", "?j", "?a"),
                      ("AConf", "?aq"), ("ArmTarget", "?aq", "?bq")),
                     output_kinds=("aconf",)),
        StreamSchema("motion-base", ("?q1", "?q2"),
                     (("BConf", "?q1"), ("BConf", "?q2")),
                     ("?t",), (("MotionB", "?q1", "?t", "?q2"),),
                     output_kinds=("traj",), deferrable=True),
        StreamSchema("motion-arm", ("?q1", "?q2", "?bq"),
                     (("AConf", "?q1"), ("ArmTarget", "?q2", "?bq")),
                     ("?t",), (("MotionA", "?q1", "?t", "?q2", "?bq"),),
                     output_kinds=("traj",), deferrable=True),
        StreamSchema("sample-pull", ("?j", "?a1", "?a2"),
                     (("AngleVal", "?j", "?a1"), ("AngleVal", "?j", "?a2")),
                     ("?bq",),
                     (("PullKin", "?j", "?a1", "?a2", "?bq"), ("BConf", "?bq")),
                     output_kinds=("bconf",)),
        StreamSchema("sample-press", ("?b",),
                     (("Button", "?b"),),
                     ("?bq",), (("PressKin", "?b", "?bq"), ("BConf", "?bq")),
                     output_kinds=("bconf",)),
        StreamSchema("sample-obs", ("?o", "?pb"),
                     (("PoseB", "?o", "?pb"),),
                     ("?obs",), (("Obs", "?o", "?pb", "?obs"),),
                     output_kinds=("obs",), eager=True),
        StreamSchema("update-belief", ("?o", "?pb", "?obs"),
                     (("PoseB", "?o", "?pb"), ("Obs", "?o", "?pb", "?obs")),
                     ("?pb2",),
                     (("BeliefUpdate", "?o", "?pb", "?obs", "?pb2"),
                      ("PoseB", "?o", "?pb2")),
                     output_kinds=("belief",), eager=True),
        StreamSchema("test-localized", ("?o", "?pb"),
                     (("PoseB", "?o", "?pb"),),
                     (), (("Localized", "?o", "?pb"),), eager=True, is_test=True),
    )

    def worth_observing(bd):
        # Observation sampling only makes sense for the beliefs the filter is
        # actually tracking; hypothetical placements are already pinned down,
        # and so is any posterior that reached the localization threshold.
        # Hypothesized detects also stop stacking after two: the plan should
        # execute one for real before imagining more.
        pb = bd["?pb"]
        if not isinstance(pb, Opaque):
            return False
        if hypo_depth.get(pb.uid, 0) >= 2:
            return False
        return not is_localized(pb.payload, cfg.grasp_tol, cfg.goal_confidence)

    bq0 = Num((float(b.robot.base),))
    pull_pair_ok = lambda bd: bd["?a1"] != bd["?a2"] and bd["?j"] != NO_JOINT
    guards = {
        "sample-pull": pull_pair_ok,
        "pull-here": pull_pair_ok,
        "kin-here": lambda bd: bd["?bq"] == bq0,
        "motion-base": lambda bd: bd["?q1"] != bd["?q2"],
        "motion-arm": lambda bd: bd["?q1"] != bd["?q2"],
        "sample-obs": worth_observing,
    }
    eager_max = {"sample-obs": cfg.planner.max_obs_hypotheses}
    hooks = {"update-belief": hook_update}
    fns = {
        "grasps": gen_grasps,
        "sample-place": gen_sample_place,
        "reach-here": gen_reach_here,
        "kin-here": gen_kin_here,
        "pull-here": gen_pull_here,
        "press-here": gen_press_here,
        "inv-reach": gen_inv_reach,
        "inv-kin": gen_inv_kin,
        "motion-base": gen_motion_base,
        "motion-arm": gen_motion_arm,
        "sample-pull": gen_sample_pull,
        "sample-press": gen_sample_press,
        "sample-obs": gen_sample_obs,
        "update-belief": gen_update_belief,
        "test-localized": gen_test_localized,
    }
    return schemas, {"fns": fns, "guards": guards, "eager_max": eager_max, "hooks": hooks}
