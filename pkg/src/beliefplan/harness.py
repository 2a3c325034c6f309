"""Stochastic environment simulator, task library, and benchmark driver.

The simulator owns the ground truth the planner never sees: exact object
poses, joint extensions, and the dice behind actuation and sensing noise.
Tasks pair a prior belief with a latent state drawn inside the prior's
support, so the filter is never conditioned on an impossible world.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import world
from .belief import FactoredBelief, point_belief, uniform_over_spans
from .config import Config, DEFAULT
from .domain import GoalSpec
from .policy import run_policy
from .world import (LatentState, Pose, RobotState, Scene, blocks,
                    forward_kinematics, furniture_blocks, load_scene,
                    reachable)

TASKS = ("inspect", "stow", "swap", "cook")
ABLATIONS = (("neither", False, False), ("constrain", True, False),
             ("defer", False, True), ("both", True, True))

HANDLE_CLEARANCE = 0.02  # m, handle stand-off in front of a drawer face


def _handle(scene: Scene, joint: str, extension: float) -> np.ndarray:
    jt = scene.joints[joint]
    off = np.array([-(jt.interior_half_extents[0] + HANDLE_CLEARANCE), 0.0])
    return jt.frame_origin(extension) + off


class EnvSimulator:
    """Executes ground actions against the latent state with noise.

    Failures are observations, never exceptions: a missed grasp or an
    out-of-reach pull returns success=False and leaves the world unchanged,
    which is exactly the self-loop recovery case the planner prices in.
    """

    def __init__(self, scene: Scene, goal: GoalSpec, latent: LatentState,
                 prior: FactoredBelief, cfg: Config,
                 seed_seq: np.random.SeedSequence):
        self.scene = scene
        self.goal = goal
        self.cfg = cfg
        self.latent = latent
        self._prior = prior
        noise, planner, filt = seed_seq.spawn(3)
        self.rng_noise = np.random.default_rng(noise)
        self.rng_planner = np.random.default_rng(planner)
        self.rng_filter = np.random.default_rng(filt)

    def initial_belief(self) -> FactoredBelief:
        return self._prior

    # -- latent-state geometry ----------------------------------------------

    def _ee(self) -> np.ndarray:
        r = self.latent.robot
        return world.end_effector(self.scene, r.base, r.arm)

    def _obj_world(self, obj: str) -> np.ndarray:
        return forward_kinematics(self.latent.poses[obj], self.latent.joints,
                                  self.scene)

    def _visible(self, obj: str) -> bool:
        point = self._obj_world(obj)
        if furniture_blocks(point, self.scene):
            return False
        for other in sorted(self.latent.poses):
            if other == obj:
                continue
            if blocks(self._obj_world(other), self.scene.object_shapes[other],
                      point, self.scene.camera):
                return False
        return True

    def _cook_tick(self) -> list[str]:
        # resting objects on a hot burner region become cooked
        if not self.latent.stove_on:
            return []
        fresh = []
        for name in sorted(self.scene.buttons):
            region = self.scene.regions[self.scene.buttons[name].region]
            center = forward_kinematics(Pose(region.frame, region.center),
                                        self.latent.joints, self.scene)
            he = np.asarray(region.half_extents)
            for obj in sorted(self.latent.poses):
                if obj in self.latent.cooked or obj in fresh:
                    continue
                if np.all(np.abs(self._obj_world(obj) - center) <= he):
                    fresh.append(obj)
        self.latent.cooked.update(fresh)
        return fresh

    # -- action execution ----------------------------------------------------

    def execute(self, action) -> dict:
        handler = getattr(self, "_do_" + action.name.replace("-", "_"))
        obs = handler(action.args)
        cooked = self._cook_tick()
        if cooked:
            obs["cooked"] = sorted(set(obs.get("cooked", ())) | set(cooked))
        return obs

    def _do_move_base(self, args) -> dict:
        target = args[2].data[0]
        lo, hi = self.scene.rail_range
        noise = self.rng_noise.normal(0.0, self.cfg.noise.base_sigma)
        reached = float(np.clip(target + noise, lo, hi))
        self.latent.robot = RobotState(reached, self.latent.robot.arm)
        return {"success": True, "reached": reached}

    def _do_move_arm(self, args) -> dict:
        target = np.asarray(args[2].data, dtype=float)
        noisy = target + self.rng_noise.normal(0.0, self.cfg.noise.arm_sigma, size=2)
        (ax_lo, ax_hi), (ay_lo, ay_hi) = self.scene.workspace
        reached = (float(np.clip(noisy[0], ax_lo, ax_hi)),
                   float(np.clip(noisy[1], ay_lo, ay_hi)))
        self.latent.robot = RobotState(self.latent.robot.base, reached)
        return {"success": True, "reached": reached}

    def _do_pick(self, args) -> dict:
        obj = args[0].name
        grasp = self.scene.grasps[args[2].name]
        ee = self._ee()
        ok = (self.latent.holding is None and obj in self.latent.poses
              and float(np.linalg.norm(ee + np.asarray(grasp.offset)
                                       - self._obj_world(obj))) <= self.cfg.grasp_tol)
        if ok:
            self.latent.holding = (obj, grasp.name)
            del self.latent.poses[obj]
        return {"success": ok, "reached": (float(ee[0]), float(ee[1]))}

    def _settle_y(self, frame: str, x: float, obj: str) -> float:
        # gravity: the object drops onto the resting height of the nearest
        # placement region in the frame, which keeps the latent state clear
        # of the support surfaces regardless of vertical actuation error
        names = [r for r in sorted(self.scene.regions)
                 if self.scene.regions[r].frame == frame]
        spans = [(r,) + self.scene.placement_span(r, obj) for r in names]
        inside = [s for s in spans if s[1] <= x <= s[2]]
        if inside:
            return inside[0][3]
        _, _, _, y = min(spans, key=lambda s: min(abs(x - s[1]), abs(x - s[2])))
        return y

    def _do_place(self, args) -> dict:
        obj = args[0].name
        if self.latent.holding is None or self.latent.holding[0] != obj:
            return {"success": False}
        grasp = self.scene.grasps[self.latent.holding[1]]
        center = self._ee() + np.asarray(grasp.offset)
        frame = args[5].name
        if frame in self.scene.joints:
            local = center - self.scene.joints[frame].frame_origin(self.latent.joints[frame])
        else:
            local, frame = center, world.WORLD
        pose = Pose(frame, (float(local[0]), self._settle_y(frame, float(local[0]), obj)))
        target = forward_kinematics(pose, self.latent.joints, self.scene)
        he = self.scene.object_shapes[obj]
        for other in sorted(self.latent.poses):
            if world.boxes_overlap(target, he, self._obj_world(other),
                                   self.scene.object_shapes[other]):
                return {"success": False}
        self.latent.holding = None
        self.latent.poses[obj] = pose
        return {"success": True, "pose": pose}

    def _do_pull(self, args) -> dict:
        return self._slide(args)

    def _do_push(self, args) -> dict:
        return self._slide(args)

    def _jams(self, joint: str, target: float) -> bool:
        # contents ride along with the drawer; the slide jams if any of
        # them would be driven into the static furniture
        centers, halves = self.scene.static_arrays()
        moved = dict(self.latent.joints, **{joint: float(target)})
        for obj in sorted(self.latent.poses):
            pose = self.latent.poses[obj]
            if pose.frame != joint:
                continue
            c = forward_kinematics(pose, moved, self.scene)
            he = self.scene.object_shapes[obj]
            if any(world.boxes_overlap(c, he, bc, bh)
                   for bc, bh in zip(centers, halves)):
                return True
        return False

    def _slide(self, args) -> dict:
        joint = args[0].name
        target = args[2].data[0]
        base = self.latent.robot.base
        here = _handle(self.scene, joint, self.latent.joints[joint])
        there = _handle(self.scene, joint, target)
        ok = (self.latent.holding is None
              and reachable(self.scene, base, here)
              and reachable(self.scene, base, there)
              and not self._jams(joint, target))
        if ok:
            # drawers seat exactly at their mechanical stops
            self.latent.joints[joint] = float(target)
        return {"success": ok, "extension": float(self.latent.joints[joint])}

    def _do_detect(self, args) -> dict:
        obj = args[0].name
        if obj not in self.latent.poses or not self._visible(obj):
            return {"detected": False, "z": None}
        if self.rng_noise.random() < self.cfg.noise.p_false_negative:
            return {"detected": False, "z": None}
        z = self._obj_world(obj) + self.rng_noise.normal(
            0.0, self.cfg.noise.sensor_sigma, size=2)
        return {"detected": True, "z": (float(z[0]), float(z[1]))}

    def _do_press_on(self, args) -> dict:
        return self._press(args, True)

    def _do_press_off(self, args) -> dict:
        return self._press(args, False)

    def _press(self, args, on: bool) -> dict:
        point = np.asarray(self.scene.buttons[args[0].name].point)
        ok = reachable(self.scene, self.latent.robot.base, point)
        if ok:
            self.latent.stove_on = on
        return {"success": ok, "stove_on": self.latent.stove_on}


def latent_goal_holds(latent: LatentState, goal: GoalSpec, scene: Scene) -> bool:
    """Goal check against ground truth, for honest benchmark scoring."""
    for obj, region, _conf in goal.bin_goals:
        if obj not in latent.poses:
            return False
        r = scene.regions[region]
        center = forward_kinematics(Pose(r.frame, r.center), latent.joints, scene)
        point = forward_kinematics(latent.poses[obj], latent.joints, scene)
        if not np.all(np.abs(point - center) <= np.asarray(r.half_extents)):
            return False
    for joint, ext, tol in goal.joint_goals:
        if abs(latent.joints[joint] - ext) > tol:
            return False
    for obj in goal.cooked_goals:
        if obj not in latent.cooked:
            return False
    if goal.hand_empty and latent.holding is not None:
        return False
    return True


# ---------------------------------------------------------------------------
# task library

def _home(scene: Scene) -> RobotState:
    return RobotState(0.6, (0.0, scene.cruise_height))


def _drawer_span(scene: Scene, drawer: str, obj: str):
    frame = scene.regions[drawer].frame
    return (frame,) + scene.placement_span(drawer, obj)


def _sample_span(rng, span) -> Pose:
    frame, x_lo, x_hi, y = span
    return Pose(frame, (float(rng.uniform(x_lo, x_hi)), y))


def _task_drawers(scene: Scene, cfg: Config, rng_prior, rng_latent,
                  latent_drawer: str):
    """Shared Inspect/Swap setup: 50/50 drawer prior, drawers closed."""
    spans = [_drawer_span(scene, "drawer:top", "block"),
             _drawer_span(scene, "drawer:bottom", "block")]
    prior_block = uniform_over_spans("block", spans, cfg.belief.particles, rng_prior)
    latent_pose = _sample_span(rng_latent, _drawer_span(scene, latent_drawer, "block"))
    joints = {j: 0.0 for j in sorted(scene.joints)}
    goal = GoalSpec(bin_goals=(("block", "drawer:bottom", cfg.goal_confidence),),
                    joint_goals=(("drawer:bottom", 0.0, cfg.joint_tol),))
    prior = FactoredBelief(poses={"block": prior_block}, held=None,
                           joints=dict(joints), robot=_home(scene))
    latent = LatentState(poses={"block": latent_pose}, joints=dict(joints),
                         robot=_home(scene))
    return prior, latent, goal


def _task_stow(scene: Scene, cfg: Config, rng_prior, rng_latent):
    """Block on the counter, sugar in the open top drawer; stow the block
    and close the drawer, which forces the tall sugar box out first."""
    joints = {"drawer:top": scene.joints["drawer:top"].max_extension,
              "drawer:bottom": 0.0}
    counter = ("world",) + scene.placement_span("counter", "block")
    prior_block = uniform_over_spans("block", [counter], cfg.belief.particles,
                                     rng_prior)
    sugar_pose = _sample_span(rng_latent, _drawer_span(scene, "drawer:top", "sugar"))
    block_pose = _sample_span(rng_latent, counter)
    goal = GoalSpec(bin_goals=(("block", "drawer:top", cfg.goal_confidence),),
                    joint_goals=(("drawer:top", 0.0, cfg.joint_tol),))
    prior = FactoredBelief(poses={"block": prior_block,
                                  "sugar": point_belief("sugar", sugar_pose)},
                           held=None, joints=dict(joints), robot=_home(scene))
    latent = LatentState(poses={"block": block_pose, "sugar": sugar_pose},
                         joints=dict(joints), robot=_home(scene))
    return prior, latent, goal


def _task_cook(scene: Scene, cfg: Config, rng_prior, rng_latent):
    """Two known boxes on the counter; the block hides behind one of them.

    The latent block is drawn from the occluded, collision-free part of the
    counter span, so a straight detect can never succeed until an occluder
    gets moved out of the camera ray.
    """
    joints = {j: 0.0 for j in sorted(scene.joints)}
    counter = ("world",) + scene.placement_span("counter", "block")
    cracker_pose = Pose("world", (1.2, scene.placement_span("counter", "cracker")[2]))
    sugar_pose = Pose("world", (1.6, scene.placement_span("counter", "sugar")[2]))
    prior_block = uniform_over_spans("block", [counter], cfg.belief.particles,
                                     rng_prior)
    known = [(forward_kinematics(p, joints, scene), scene.object_shapes[o])
             for o, p in (("cracker", cracker_pose), ("sugar", sugar_pose))]
    bhe = scene.object_shapes["block"]
    for _ in range(10_000):
        pose = _sample_span(rng_latent, counter)
        pt = forward_kinematics(pose, joints, scene)
        if any(world.boxes_overlap(pt, bhe, c, he) for c, he in known):
            continue
        if all(not blocks(c, he, pt, scene.camera) for c, he in known):
            continue
        block_pose = pose
        break
    else:
        raise RuntimeError("no occluded counter placement found")
    goal = GoalSpec(cooked_goals=("block",))
    prior = FactoredBelief(poses={"block": prior_block,
                                  "cracker": point_belief("cracker", cracker_pose),
                                  "sugar": point_belief("sugar", sugar_pose)},
                           held=None, joints=dict(joints), robot=_home(scene))
    latent = LatentState(poses={"block": block_pose, "cracker": cracker_pose,
                                "sugar": sugar_pose},
                         joints=dict(joints), robot=_home(scene))
    return prior, latent, goal


def make_task(name: str, cfg: Config = DEFAULT, seed: int = 0,
              scene: Scene | None = None) -> EnvSimulator:
    """Build a seeded trial: prior belief, latent state in its support, goal."""
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}")
    scene = scene or load_scene()
    ss = np.random.SeedSequence([TASKS.index(name), seed])
    k_prior, k_latent, k_env = ss.spawn(3)
    rng_prior = np.random.default_rng(k_prior)
    rng_latent = np.random.default_rng(k_latent)
    if name == "inspect":
        prior, latent, goal = _task_drawers(scene, cfg, rng_prior, rng_latent,
                                            "drawer:bottom")
    elif name == "swap":
        prior, latent, goal = _task_drawers(scene, cfg, rng_prior, rng_latent,
                                            "drawer:top")
    elif name == "stow":
        prior, latent, goal = _task_stow(scene, cfg, rng_prior, rng_latent)
    else:
        prior, latent, goal = _task_cook(scene, cfg, rng_prior, rng_latent)
    return EnvSimulator(scene, goal, latent, prior, cfg, k_env)


# ---------------------------------------------------------------------------
# benchmark driver

@dataclass
class TrialResult:
    task: str
    seed: int
    ablation: str
    success: bool
    goal_holds: bool
    latent_goal: bool
    planning_time: float      # synthetic seconds, capped at the budget
    replans: int
    actions: int
    failure_reason: str | None
    constrained: int
    fallbacks: int
    structure_violations: int
    resets: int
    events: list


def run_trial(task: str, cfg: Config, seed: int, ablation: str = "custom",
              stream_log: list | None = None, episode_log: list | None = None,
              scene: Scene | None = None) -> TrialResult:
    env = make_task(task, cfg, seed, scene=scene)
    out = run_policy(env, cfg, stream_log=stream_log, episode_log=episode_log)
    return TrialResult(
        task=task, seed=seed, ablation=ablation,
        success=out["success"], goal_holds=out["goal_holds"],
        latent_goal=latent_goal_holds(env.latent, env.goal, env.scene),
        planning_time=round(min(out["plan_time"], cfg.budget), 9),
        replans=out["episodes"], actions=out["actions"],
        failure_reason=None if out["success"] else out["status"],
        constrained=out["constrained"], fallbacks=out["fallbacks"],
        structure_violations=out["structure_violations"],
        resets=out["resets"], events=out["events"],
    )


def _aggregate(rows: list[TrialResult]) -> dict:
    won = [r for r in rows if r.success]
    return {
        "task": rows[0].task, "ablation": rows[0].ablation,
        "trials": len(rows), "successes": len(won),
        "success_rate": round(len(won) / len(rows), 6),
        "mean_time_success": round(float(np.mean([r.planning_time for r in won])), 6) if won else "",
        "mean_actions_success": round(float(np.mean([r.actions for r in won])), 6) if won else "",
        "mean_replans": round(float(np.mean([r.replans for r in rows])), 6),
        "latent_goal_rate": round(sum(r.latent_goal for r in rows) / len(rows), 6),
        "fallbacks": sum(r.fallbacks for r in rows),
        "structure_violations": sum(r.structure_violations for r in rows),
    }


def _write_ndjson(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _fault_result(task: str, seed: int, ablation: str, err: Exception) -> TrialResult:
    return TrialResult(task=task, seed=seed, ablation=ablation, success=False,
                       goal_holds=False, latent_goal=False, planning_time=0.0,
                       replans=0, actions=0, failure_reason="fault",
                       constrained=0, fallbacks=0, structure_violations=0,
                       resets=0, events=[{"event": "fault", "error": repr(err)}])


def run_benchmark(out_dir, tasks=TASKS, trials: int = 25, cfg: Config = DEFAULT,
                  seed0: int = 0, ablations=ABLATIONS,
                  log_streams: bool = False, scene: Scene | None = None) -> dict:
    """Run tasks x seeds x ablations; write deterministic result files.

    Output is a pure function of the arguments: trials.ndjson (one record
    per trial), episodes.ndjson (one record per executed action),
    aggregate.csv (one row per task/ablation cell), optionally
    streams.ndjson, and runinfo.json describing the configuration.
    Trial faults are recorded as failures and never abort the suite.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trial_rows: list[dict] = []
    episode_rows: list[dict] = []
    stream_rows: list[dict] = []
    cells = []
    for task in tasks:
        for label, constrain, defer in ablations:
            tcfg = cfg.with_ablation(constrain, defer)
            bucket = []
            for i in range(trials):
                slog: list = []
                elog: list = []
                try:
                    res = run_trial(task, tcfg, seed0 + i, ablation=label,
                                    stream_log=slog, episode_log=elog,
                                    scene=scene)
                except Exception as err:  # noqa: BLE001 - faults become rows
                    res = _fault_result(task, seed0 + i, label, err)
                bucket.append(res)
                trial_rows.append(asdict(res))
                tag = {"task": task, "ablation": label, "seed": seed0 + i}
                episode_rows.extend({**tag, **row} for row in elog)
                if log_streams:
                    stream_rows.extend({**tag, **row} for row in slog)
            cells.append(_aggregate(bucket))

    _write_ndjson(out / "trials.ndjson", trial_rows)
    _write_ndjson(out / "episodes.ndjson", episode_rows)
    if log_streams:
        _write_ndjson(out / "streams.ndjson", stream_rows)
    fields = list(cells[0].keys())
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(cells)
    with open(out / "runinfo.json", "w") as fh:
        json.dump({"tasks": list(tasks), "trials": trials, "seed0": seed0,
                   "ablations": [a[0] for a in ablations],
                   "budget": cfg.budget, "max_cost": cfg.planner.max_cost,
                   "particles": cfg.belief.particles,
                   "rows": len(trial_rows)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"cells": cells, "trials": trial_rows}
