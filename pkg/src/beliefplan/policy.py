"""Replan-after-every-action execution policy.

Each episode determinizes the current belief, solves, executes the first
action, and folds the observation back into the belief.  The tail of the
previous plan is compiled into a structure constraint so the next solve
only has to re-bind values, falling back to an unconstrained solve when
the constrained one fails or times out.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .belief import (DegenerateBelief, FactoredBelief, SensorModel,
                     effective_sample_size, mark_cooked, normalize,
                     reset_to_support, systematic_resample, transition_update,
                     update_detection, update_no_detection, visibility_mask)
from .config import Config
from .domain import determinize, evaluate_goal
from .planlang import Const, GroundAction, Sym, ValueFactory, any_optimistic
from .planner import (Solution, StreamRegistry, VirtualClock,
                      iter_action_values, solve)


def is_constant(v) -> bool:
    """Only named symbols survive re-determinization unchanged; numeric
    configs must re-bind because execution noise moves the robot."""
    return isinstance(v, Const)


def extract_skeleton(actions: list[GroundAction]):
    """Plan tail as (schema, pattern) pairs; shared non-constants get the
    same placeholder so re-binding preserves coreference."""
    mapping: dict = {}
    skeleton = []
    for ga in actions:
        pattern = []
        for v in ga.args:
            if is_constant(v):
                pattern.append(v)
            else:
                s = mapping.get(v)
                if s is None:
                    s = Sym(f"@v{len(mapping) + 1}")
                    mapping[v] = s
                pattern.append(s)
        skeleton.append((ga.name, tuple(pattern)))
    return skeleton, mapping


def structure_matches(plan: list[GroundAction], skeleton) -> tuple[bool, dict | None]:
    """Same schema sequence, equal constants, consistent placeholder values."""
    if len(plan) != len(skeleton):
        return False, None
    binding: dict = {}
    for ga, (name, pattern) in zip(plan, skeleton):
        if ga.name != name or len(ga.args) != len(pattern):
            return False, None
        for pv, av in zip(pattern, ga.args):
            if isinstance(pv, Sym):
                if binding.setdefault(pv, av) != av:
                    return False, None
            elif pv != av:
                return False, None
    return True, binding


def _reset(pb, events, reason):
    events.append({"event": "belief-reset", "obj": pb.obj, "reason": reason})
    return reset_to_support(pb)


def apply_observation(belief: FactoredBelief, action: GroundAction, obs: dict,
                      scene, cfg: Config, rng, events: list) -> FactoredBelief:
    """Fold one executed action's outcome into the belief."""
    name = action.name
    sensor = SensorModel(cfg.noise.sensor_sigma, cfg.noise.p_false_negative)
    if name == "move-base":
        belief = transition_update(belief, "move", part="base", reached=obs["reached"])
    elif name == "move-arm":
        belief = transition_update(belief, "move", part="arm", reached=obs["reached"])
    elif name == "pick":
        obj = action.args[0].name
        if obs["success"]:
            belief = transition_update(belief, "pick", obj=obj,
                                       grasp=action.args[2].name)
        else:
            # the gripper closed on nothing: kill belief mass near the
            # attempted grasp point, it cannot be there
            pb = belief.poses[obj]
            attempt = np.asarray(obs["reached"]) + np.asarray(scene.grasp_for(obj).offset)
            pts = pb.world_points(belief.joints, scene)
            miss = (np.linalg.norm(pts - attempt, axis=1) > cfg.grasp_tol).astype(float)
            try:
                pb2 = normalize(replace(pb, weights=pb.weights * miss))
            except DegenerateBelief:
                pb2 = _reset(pb, events, "pick-miss")
                belief = belief.copy()
                belief.resets += 1
            belief = belief.copy()
            belief.poses = dict(belief.poses)
            belief.poses[obj] = pb2
    elif name == "place":
        if obs["success"]:
            belief = transition_update(belief, "place", obj=action.args[0].name,
                                       pose=obs["pose"])
    elif name in ("pull", "push"):
        if obs["success"]:
            belief = transition_update(belief, "joint", joint=action.args[0].name,
                                       extension=obs["extension"])
    elif name == "detect":
        obj = action.args[0].name
        pb = belief.poses[obj]
        vis = visibility_mask(pb, scene, belief.joints,
                              belief.occluders_for(obj, scene))
        try:
            if obs["detected"]:
                pb2 = update_detection(pb, obs["z"], sensor, scene,
                                       belief.joints, vis)
            else:
                pb2 = update_no_detection(pb, sensor, vis)
        except DegenerateBelief:
            pb2 = _reset(pb, events, "filter-degenerate")
            belief = belief.copy()
            belief.resets += 1
        if cfg.belief.resample and effective_sample_size(pb2) < cfg.belief.ess_fraction * len(pb2):
            pb2 = systematic_resample(pb2, rng)
        belief = belief.copy()
        belief.poses = dict(belief.poses)
        belief.poses[obj] = pb2
    elif name in ("press-on", "press-off"):
        belief = transition_update(belief, "press", stove_on=obs["stove_on"],
                                   cooked=obs.get("cooked", ()))
    if obs.get("cooked"):
        belief = mark_cooked(belief, obs["cooked"])
    return belief


def run_policy(env, cfg: Config, stream_log: list | None = None,
               episode_log: list | None = None) -> dict:
    """Execute until the goal belief is reached or planning gives out."""
    stream_log = stream_log if stream_log is not None else []
    episode_log = episode_log if episode_log is not None else []
    clock = VirtualClock(cfg.effort, cfg.budget)
    belief = env.initial_belief()
    scene, goal = env.scene, env.goal
    skeleton = None
    f_prev: tuple = ()
    episodes = executed = 0
    constrained_hits = fallbacks = structure_violations = 0
    events: list = []
    status = "running"

    while episodes < cfg.planner.max_episodes:
        if clock.expired():
            status = "budget"
            break
        episodes += 1
        problem = determinize(belief, goal, scene, cfg, vf=ValueFactory(),
                              extra_static=f_prev, rng=env.rng_planner)
        registry = StreamRegistry(problem)
        sol: Solution | None = None
        used_constrained = False
        if skeleton and cfg.planner.use_constraints:
            slice_end = clock.t + cfg.planner.constrained_timeout_frac * max(
                cfg.budget - clock.t, 0.0)
            sol = solve(problem, cfg, clock, registry, skeleton=skeleton,
                        deadline=slice_end, log=stream_log)
            if sol is not None and sol.plan:
                used_constrained = True
                constrained_hits += 1
                ok, _ = structure_matches(sol.plan, skeleton)
                if not ok:
                    structure_violations += 1
        if sol is None:
            if skeleton and cfg.planner.use_constraints:
                fallbacks += 1
            sol = solve(problem, cfg, clock, registry, log=stream_log)
        if sol is None:
            status = "budget" if clock.expired() else "no-plan"
            break
        if not sol.plan:
            status = "success"
            break
        action = sol.plan[0]
        assert not any_optimistic(list(iter_action_values(action))), action
        obs = env.execute(action)
        executed += 1
        clock.charge("belief_update")
        belief = apply_observation(belief, action, obs, scene, cfg,
                                   env.rng_filter, events)
        episode_log.append({
            "episode": episodes, "constrained": used_constrained,
            "plan_len": len(sol.plan), "cost": round(sol.cost, 6),
            "rounds": sol.rounds, "levels": sol.levels,
            "deferred": len(sol.deferred),
            "action": repr(action), "outcome": bool(obs.get("success", True)),
        })
        f_prev = sol.constant_facts
        skeleton = extract_skeleton(sol.plan[1:])[0] if len(sol.plan) > 1 else None
    else:
        status = "episode-cap"

    goal_reached = evaluate_goal(belief, goal, scene, cfg)
    return {
        "success": status == "success",
        "status": status,
        "goal_holds": bool(goal_reached),
        "episodes": episodes,
        "actions": executed,
        "plan_time": round(clock.t, 9),
        "constrained": constrained_hits,
        "fallbacks": fallbacks,
        "structure_violations": structure_violations,
        "resets": belief.resets,
        "events": events,
        "work": dict(sorted(clock.counts.items())),
        "final_belief": belief,
    }
