"""Optimistic stream planning over determinized belief problems.

Sampling streams are represented optimistically during search (one
placeholder output per instance), then bound lazily in dependency order.
Deferrable instances that do not feed the first action stay unevaluated;
the policy re-plans after each executed action, so deferred work is only
done if it survives into the next plan.  Failed bindings retract the
upstream samples they were built on, which gives systematic backtracking
without global bookkeeping.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, replace

from .config import Config, EffortModel
from .planlang import (And, Const, Fact, GroundAction, Lit, Num, Problem,
                       StreamSchema, Sym, Value, any_optimistic, applicable,
                       apply, fact, ground_schema, holds, index_facts,
                       is_optimistic, join)


class VirtualClock:
    """Deterministic planning clock charged in synthetic seconds.

    Wall time depends on host load, which would make trial outcomes
    irreproducible; charging per unit of search and stream work keeps the
    budget meaningful and the results exactly repeatable.
    """

    def __init__(self, effort: EffortModel, budget: float):
        self.effort = effort
        self.budget = budget
        self.t = 0.0
        self.counts: dict[str, int] = {}

    def charge(self, kind: str, n: int = 1) -> None:
        self.t += getattr(self.effort, "per_" + kind) * n
        self.counts[kind] = self.counts.get(kind, 0) + n

    def expired(self, deadline: float | None = None) -> bool:
        limit = self.budget if deadline is None else min(self.budget, deadline)
        return self.t >= limit


def key_repr(key: tuple) -> str:
    name, inputs = key
    return name + "(" + ", ".join(repr(v) for v in inputs) + ")"


class StreamInstance:
    """One stream applied to specific inputs; owns its sample generator."""

    def __init__(self, schema: StreamSchema, inputs: tuple, fns: dict, vf):
        self.schema = schema
        self.inputs = inputs
        self.key = (schema.name, inputs)
        self._fns = fns
        self._vf = vf
        self._gen = None
        self.attempts = 0
        self.evaluated = False
        self._opt = None
        self.real_results: list[tuple] = []

    def optimistic_outputs(self) -> tuple:
        if self._opt is None:
            self._opt = tuple(self._vf.optimistic(kind, (self.key, i))
                              for i, kind in enumerate(self.schema.output_kinds))
        return self._opt

    def next_output(self, clock: VirtualClock, max_attempts: int):
        if self.attempts >= max_attempts:
            return None, "attempts"
        if self._gen is None:
            self._gen = self._fns[self.schema.name](*self.inputs)
        self.attempts += 1
        clock.charge("stream_call")
        try:
            raw = next(self._gen)
        except StopIteration:
            return None, "exhausted"
        outs = tuple(e if isinstance(e, Value) else self._vf.opaque(e[0], e[1])
                     for e in raw)
        return outs, "yield"


def instantiate_certified(schema: StreamSchema, binding: dict) -> list[Fact]:
    """Certified fact patterns may hold vars, literal values, or callables
    computed from the binding (a callable returning None drops the fact)."""
    out = []
    for pat in schema.certified:
        args, ok = [], True
        for t in pat[1:]:
            if isinstance(t, str) and t.startswith("?"):
                args.append(binding[t])
            elif callable(t) and not isinstance(t, Value):
                v = t(binding)
                if v is None:
                    ok = False
                    break
                args.append(v)
            else:
                args.append(t)
        if ok:
            out.append(Fact(pat[0], tuple(args)))
    return out


class StreamRegistry:
    """Episode-scoped store of stream instances, real facts, provenance."""

    def __init__(self, problem: Problem):
        self.problem = problem
        self.vf = problem.meta["vf"]
        fns = problem.stream_fns
        self.fns = fns.get("fns", fns if isinstance(fns, dict) else {})
        self.guards = fns.get("guards", {})
        self.eager_max = fns.get("eager_max", {})
        self.hooks = fns.get("hooks", {})
        base = problem.meta.get("static_order")
        if base is None:
            base = sorted(problem.ctx.static, key=repr)
        self.real_facts: list[Fact] = list(base)
        self._real_seen: set[Fact] = set(self.real_facts)
        self.instances: dict[tuple, StreamInstance] = {}
        self.disabled: set[tuple] = set()
        self.value_source: dict = {}
        self.bind_history: list = []
        self.eager_values: set = set()
        self.tombstones: dict[tuple, set] = {}      # instance -> retracted outputs

    def add_real(self, f: Fact) -> bool:
        if f in self._real_seen:
            return False
        self._real_seen.add(f)
        self.real_facts.append(f)
        return True

    def get_instance(self, schema: StreamSchema, inputs: tuple) -> StreamInstance:
        key = (schema.name, inputs)
        inst = self.instances.get(key)
        if inst is None:
            inst = StreamInstance(schema, inputs, self.fns, self.vf)
            self.instances[key] = inst
        return inst

    def certify_real(self, inst: StreamInstance, outs: tuple, log: list) -> None:
        binding = dict(zip(inst.schema.inputs, inst.inputs))
        binding.update(zip(inst.schema.outputs, outs))
        inst.real_results.append(outs)
        for v in outs:
            self.value_source[v] = inst.key
            self.bind_history.append(v)
        for f in instantiate_certified(inst.schema, binding):
            self.add_real(f)
        hook = self.hooks.get(inst.schema.name)
        if hook:
            for f in hook(binding, outs):
                self.add_real(f)

    def retract_value(self, v, log: list) -> None:
        """Forget a sample: drop every fact mentioning it so the producing
        instance is re-proposed optimistically and re-sampled next round."""
        self.real_facts = [f for f in self.real_facts if v not in f.args]
        self._real_seen = set(self.real_facts)
        src = self.value_source.get(v)
        if src is not None:
            inst = self.instances.get(src)
            if inst is not None:
                dead = [r for r in inst.real_results if v in r]
                if dead:
                    # never hand back a sample that was already rejected
                    self.tombstones.setdefault(src, set()).update(dead)
                inst.real_results = [r for r in inst.real_results if v not in r]
                inst._gen = None  # a spent generator cannot re-propose
        log.append({"event": "retract", "value": repr(v),
                    "source": key_repr(src) if src else None})

    def has_real_primary(self, schema: StreamSchema, binding: dict) -> bool:
        if not schema.certified:
            return False
        pat = schema.certified[0]
        bound = {k: v for k, v in binding.items() if k in schema.inputs}
        from .planlang import match
        for f in self.real_facts:
            if f.pred == pat[0] and match(pat, f, bound) is not None:
                return True
        return False


def evaluate_eager(registry: StreamRegistry, inst: StreamInstance,
                   clock: VirtualClock, log: list) -> None:
    limit = registry.eager_max.get(inst.schema.name, 1)
    if inst.evaluated:
        # re-deriving after a retraction; the old generator is spent
        inst._gen = None
    got = 0
    for _ in range(limit):
        outs, why = inst.next_output(clock, max_attempts=10 ** 9)
        if outs is None:
            break
        got += 1
        registry.certify_real(inst, outs, log)
        registry.eager_values.update(outs)
    inst.evaluated = True
    log.append({"event": "eager", "stream": inst.schema.name,
                "key": key_repr(inst.key), "results": got})
    if got == 0:
        registry.disabled.add(inst.key)


def layer_streams(problem: Problem, registry: StreamRegistry, levels: int,
                  clock: VirtualClock, log: list) -> list[Fact]:
    """Build the optimistic fact layer by iterating stream application."""
    opt_facts: list[Fact] = []
    opt_seen: set[Fact] = set()
    emitted: set[tuple] = set()
    for _ in range(levels):
        by_pred = index_facts(registry.real_facts + opt_facts)

        def note_real(f: Fact) -> None:
            if registry.add_real(f):
                by_pred.setdefault(f.pred, []).append(f)

        for schema in problem.streams:
            for binding, _support in join(schema.domain, by_pred):
                inputs = tuple(binding[v] for v in schema.inputs)
                key = (schema.name, inputs)
                if key in registry.disabled:
                    continue
                guard = registry.guards.get(schema.name)
                if guard and not guard({v: binding[v] for v in schema.inputs}):
                    continue
                if schema.eager:
                    # eager streams certify facts about real values only; they
                    # never stand in optimistically for a hypothetical input
                    if any_optimistic(inputs):
                        continue
                    inst = registry.get_instance(schema, inputs)
                    if not inst.evaluated or not inst.real_results:
                        before = len(registry.real_facts)
                        evaluate_eager(registry, inst, clock, log)
                        for f in registry.real_facts[before:]:
                            by_pred.setdefault(f.pred, []).append(f)
                    continue
                inst = registry.get_instance(schema, inputs)
                if inst.real_results or key in emitted:
                    continue
                if schema.once and registry.has_real_primary(schema, binding):
                    continue
                emitted.add(key)
                out_binding = dict(binding)
                out_binding.update(zip(schema.outputs, inst.optimistic_outputs()))
                for f in instantiate_certified(schema, out_binding):
                    if f not in opt_seen and f not in registry._real_seen:
                        opt_seen.add(f)
                        opt_facts.append(f)
    return opt_facts


def ground_all(problem: Problem, registry: StreamRegistry, opt_facts: list[Fact],
               clock: VirtualClock, skeleton=None) -> list[GroundAction]:
    by_pred = index_facts(registry.real_facts + opt_facts)
    schemas = problem.schemas
    if skeleton is not None:
        names = {name for name, _ in skeleton}
        schemas = tuple(s for s in problem.schemas if s.name in names)
    actions: list[GroundAction] = []
    for schema in schemas:
        gas = ground_schema(schema, by_pred)
        clock.charge("ground_action", max(len(gas), 1))
        actions.extend(gas)
    return actions


def apply_skeleton(actions: list[GroundAction], skeleton, goal):
    """Compile a plan-structure constraint into the action set.

    Position i admits only ground actions unifying with the skeleton entry;
    shared placeholders must assign consistently (enforced through Bound /
    Assigned fluents), and an ordering fluent forces positions in sequence.
    """
    wrapped: list[GroundAction] = []
    for i, (name, pattern) in enumerate(skeleton):
        pre_extra = (fact("Applied", Num((i,))),) if i > 0 else ()
        for ga in actions:
            if ga.name != name or len(ga.args) != len(pattern):
                continue
            sym_binding: dict[Sym, object] = {}
            ok = True
            for pv, av in zip(pattern, ga.args):
                if isinstance(pv, Sym):
                    if sym_binding.get(pv, av) != av:
                        ok = False
                        break
                    sym_binding[pv] = av
                elif pv != av:
                    ok = False
                    break
            if not ok:
                continue
            wrapped.append(replace(
                ga,
                pre=ga.pre + pre_extra,
                constraint_requires=tuple(sorted(sym_binding.items(),
                                                 key=lambda t: t[0].name)),
                constraint_effects=(fact("Applied", Num((i + 1,))),),
            ))
    goal2 = And((goal, Lit(fact("Applied", Num((len(skeleton),))))))
    return wrapped, goal2


def search(init: frozenset, goal, actions: list[GroundAction], ctx,
           clock: VirtualClock, max_cost: float, deadline: float | None,
           weight: float = 0.0):
    """Uniform-cost search (weighted by goal-count when weight > 0).

    Transit actions (base/arm moves) are instrumental: no goal mentions a
    configuration, so the frontier would otherwise drown in configuration
    permutations.  Each successor therefore folds the transits an action
    needs into one step: (base move?, arm move?, action).  Plans still come
    back flat, with the transit actions emitted individually."""
    goal_parts = tuple(goal.parts) if isinstance(goal, And) else (goal,)

    def h(state):
        if weight <= 0.0:
            return 0.0
        return weight * sum(0.0 if holds(state, p, ctx) else 1.0 for p in goal_parts)

    # a transit swaps one configuration fact for another; index the swap edges
    # and remember which (predicate, subject) pairs transits control
    edges: dict[tuple[Fact, Fact], list[GroundAction]] = {}
    controlled: set[tuple] = set()
    manips: list[GroundAction] = []
    for ga in actions:
        if ga.transit and len(ga.adds) == 1 and len(ga.dels) == 1:
            edges.setdefault((ga.dels[0], ga.adds[0]), []).append(ga)
            controlled.add((ga.adds[0].pred, ga.adds[0].args[0]))
        else:
            manips.append(ga)

    def conf_key(f: Fact):
        return (f.pred, f.args[0]) if f.args else None

    # needed configurations per action, in declared precondition order
    # (the domain lists a base configuration before the arm's, and an arm
    # transit is only collision-checked at the base it was sampled for)
    needs: list[tuple[Fact, ...]] = []
    always: list[int] = []
    by_anchor: dict[Fact, list[int]] = {}
    for idx, ga in enumerate(manips):
        needs.append(tuple(f for f in ga.pre if conf_key(f) in controlled))
        anchor = next((f for f in ga.pre if conf_key(f) not in controlled), None)
        if anchor is not None:
            by_anchor.setdefault(anchor, []).append(idx)
        else:
            always.append(idx)

    tie = itertools.count()
    start = frozenset(init)
    heap = [(h(start), next(tie), 0.0, start)]
    best = {start: 0.0}
    came_from: dict[frozenset, tuple] = {}
    while heap:
        if clock.expired(deadline):
            return None, None, "timeout"
        _, _, g, state = heapq.heappop(heap)
        if g > best.get(state, float("inf")):
            continue
        if holds(state, goal, ctx):
            plan = []
            node = state
            while node in came_from:
                prev, steps = came_from[node]
                plan.extend(reversed(steps))
                node = prev
            plan.reverse()
            return plan, g, "goal"
        clock.charge("expansion")
        cur_conf = {conf_key(f): f for f in state if conf_key(f) in controlled}
        cand = set(always)
        for f in state:
            hits = by_anchor.get(f)
            if hits:
                cand.update(hits)
        for idx in sorted(cand):
            ga = manips[idx]
            # thread transits for each missing configuration, then the action
            chains = [(state, g, (), cur_conf)]
            for need in needs[idx]:
                nxt = []
                for s, gacc, steps, confs in chains:
                    if need in s:
                        nxt.append((s, gacc, steps, confs))
                        continue
                    at = confs.get(conf_key(need))
                    for mv in edges.get((at, need), ()):
                        if not applicable(s, mv, ctx):
                            continue
                        s1, dc = apply(s, mv, ctx)
                        c1 = dict(confs)
                        c1[conf_key(need)] = need
                        nxt.append((s1, gacc + dc, steps + (mv,), c1))
                chains = nxt
                if not chains:
                    break
            for s, gacc, steps, _confs in chains:
                if not applicable(s, ga, ctx):
                    continue
                s2, dc = apply(s, ga, ctx)
                g2 = gacc + dc
                if g2 > max_cost + 1e-9:
                    continue
                if g2 < best.get(s2, float("inf")) - 1e-12:
                    best[s2] = g2
                    came_from[s2] = (state, steps + (ga,))
                    heapq.heappush(heap, (g2 + h(s2), next(tie), g2, s2))
    return None, None, "exhausted"


def iter_action_values(ga: GroundAction):
    for v in ga.args:
        yield v
    for f in ga.pre + ga.neg_pre + ga.adds + ga.dels + ga.support:
        yield from f.args
    for _neg, f in ga.test_pre:
        yield from f.args
    for ce in ga.cond_effects:
        for f in ce.requires + ce.adds:
            yield from f.args
    for _sym, v in ga.constraint_requires:
        yield v


def extract_stream_plan(plan: list[GroundAction], registry: StreamRegistry) -> list[tuple]:
    """Instances whose outputs the plan uses, in dependency order."""
    order: list[tuple] = []
    seen: set[tuple] = set()

    def add_key(key: tuple) -> None:
        if key in seen:
            return
        seen.add(key)
        for iv in registry.instances[key].inputs:
            if is_optimistic(iv):
                add_key(iv.source[0])
        order.append(key)

    for ga in plan:
        for v in iter_action_values(ga):
            if is_optimistic(v):
                add_key(v.source[0])
    return order


def schedule_deferred(stream_plan: list[tuple], plan: list[GroundAction],
                      registry: StreamRegistry, use_deferral: bool):
    """Split the stream plan into instances to bind now vs to defer.

    Now-set: everything feeding the first action plus every non-deferrable
    instance, closed over input dependencies.  Reasons are kept per key so
    scheduling decisions can be audited from the log.
    """
    reasons: dict[tuple, str] = {}
    if not use_deferral or not plan:
        return list(stream_plan), [], {k: "no-deferral" for k in stream_plan}

    def mark(key: tuple, reason: str) -> None:
        if key in reasons:
            return
        reasons[key] = reason
        for iv in registry.instances[key].inputs:
            if is_optimistic(iv):
                mark(iv.source[0], "dependency")

    for v in iter_action_values(plan[0]):
        if is_optimistic(v):
            mark(v.source[0], "first-action")
    for key in stream_plan:
        if not registry.instances[key].schema.deferrable:
            mark(key, "non-deferrable")
    now = [k for k in stream_plan if k in reasons]
    deferred = [k for k in stream_plan if k not in reasons]
    for k in deferred:
        reasons[k] = "deferrable"
    return now, deferred, reasons


def bind_instances(now: list[tuple], registry: StreamRegistry, clock: VirtualClock,
                   cfg: Config, log: list, bindings: dict):
    """Evaluate the now-set in order, threading real values through."""
    for key in now:
        inst0 = registry.instances[key]
        real_inputs = tuple(bindings.get(v, v) for v in inst0.inputs)
        if any_optimistic(real_inputs):
            return key, "unbound-inputs"
        cinst = registry.get_instance(inst0.schema, real_inputs)
        if cinst.key in registry.disabled:
            return key, "disabled"
        dead = registry.tombstones.get(cinst.key, ())
        outs = next((r for r in cinst.real_results if r not in dead), None)
        if outs is not None:
            outcome = "reused"
        else:
            while True:
                outs, why = cinst.next_output(clock, cfg.planner.generator_attempts)
                if outs is None:
                    registry.disabled.add(cinst.key)
                    log.append({"event": "bind", "stream": inst0.schema.name,
                                "key": key_repr(cinst.key), "outcome": why,
                                "attempt": cinst.attempts})
                    return key, why
                if outs not in dead:
                    break
            registry.certify_real(cinst, outs, log)
            outcome = "bound"
        log.append({"event": "bind", "stream": inst0.schema.name,
                    "key": key_repr(cinst.key), "outcome": outcome,
                    "attempt": cinst.attempts})
        for opt, real in zip(inst0.optimistic_outputs(), outs):
            bindings[opt] = real
    return None, None


def substitute_plan(plan: list[GroundAction], bindings: dict,
                    problem: Problem) -> list[GroundAction]:
    """Rewrite bound values into the plan and refresh value-dependent costs."""
    by_name = {s.name: s for s in problem.schemas}

    def sv(v):
        return bindings.get(v, v)

    def sf(f: Fact) -> Fact:
        return Fact(f.pred, tuple(sv(a) for a in f.args))

    out = []
    for ga in plan:
        args = tuple(sv(a) for a in ga.args)
        support = tuple(sf(f) for f in ga.support)
        schema = by_name.get(ga.name)
        cost = ga.cost
        if schema is not None:
            cost = float(schema.cost_fn(dict(zip(schema.params, args)), support))
        out.append(replace(
            ga,
            args=args,
            pre=tuple(sf(f) for f in ga.pre),
            neg_pre=tuple(sf(f) for f in ga.neg_pre),
            test_pre=tuple((neg, sf(f)) for neg, f in ga.test_pre),
            adds=tuple(sf(f) for f in ga.adds),
            dels=tuple(sf(f) for f in ga.dels),
            cond_effects=tuple(replace(ce, requires=tuple(sf(f) for f in ce.requires),
                                       adds=tuple(sf(f) for f in ce.adds))
                               for ce in ga.cond_effects),
            support=support,
            cost=cost,
            constraint_requires=tuple((s, sv(v)) for s, v in ga.constraint_requires),
        ))
    return out


def diagnose(state: frozenset, ga: GroundAction, ctx) -> tuple | None:
    """Mirror of `applicable` that reports the first failing condition."""
    for f in ga.pre:
        if f not in state and f not in ctx.static:
            return ("pre", f)
    for f in ga.neg_pre:
        if f in state:
            return ("neg", f)
    for sym, val in ga.constraint_requires:
        if fact("Bound", sym) in state and fact("Assigned", sym, val) not in state:
            return ("constraint", fact("Assigned", sym, val))
    for negated, f in ga.test_pre:
        if ctx.lit_holds(state, f) == negated:
            return ("test", f)
    return None


def replay(plan: list[GroundAction], init: frozenset, goal, ctx):
    """Symbolically re-execute a substituted plan; deferred placeholders
    flow through untouched (their tests stay optimistically true)."""
    state = frozenset(init)
    total = 0.0
    for idx, ga in enumerate(plan):
        why = diagnose(state, ga, ctx)
        if why is not None:
            return None, (idx, why)
        state, dc = apply(state, ga, ctx)
        total += dc
    if not holds(state, goal, ctx):
        return None, (len(plan), ("goal", None))
    return total, None


@dataclass
class Solution:
    plan: list[GroundAction]
    cost: float
    constant_facts: tuple
    rounds: int
    levels: int
    now: tuple = ()
    deferred: tuple = ()
    reasons: dict | None = None


def constant_facts(registry: StreamRegistry) -> tuple:
    """Facts that survive re-determinization.  Numeric configs are excluded:
    execution noise moves the robot, so a carried-over kinematic fact would
    keep attracting plans to a pose the robot can no longer exactly occupy."""
    return tuple(f for f in registry.real_facts
                 if f.args and all(isinstance(a, Const) for a in f.args))


MAX_ROUNDS = 24


def solve(problem: Problem, cfg: Config, clock: VirtualClock,
          registry: StreamRegistry | None = None, skeleton=None,
          deadline: float | None = None, log: list | None = None) -> Solution | None:
    """Layer, ground, search, schedule, bind, replay; repeat until bound."""
    log = log if log is not None else []
    registry = registry or StreamRegistry(problem)
    levels = cfg.planner.optimistic_levels
    rounds = 0
    while rounds < MAX_ROUNDS and not clock.expired(deadline):
        rounds += 1
        log.append({"event": "round", "n": rounds})
        opt_facts = layer_streams(problem, registry, levels, clock, log)
        problem.ctx.static.clear()
        problem.ctx.static.update(registry.real_facts)
        problem.ctx.static.update(opt_facts)
        actions = ground_all(problem, registry, opt_facts, clock, skeleton)
        goal = problem.goal
        if skeleton is not None:
            actions, goal = apply_skeleton(actions, skeleton, goal)
        plan, cost, why = search(problem.init, goal, actions, problem.ctx, clock,
                                 problem.max_cost, deadline,
                                 cfg.planner.heuristic_weight)
        if plan is None:
            if why == "timeout":
                return None
            if levels < cfg.planner.max_optimistic_levels:
                levels += 1
                continue
            return None
        if not plan:
            return Solution([], 0.0, constant_facts(registry), rounds, levels)
        stream_plan = extract_stream_plan(plan, registry)
        now, deferred, reasons = schedule_deferred(stream_plan, plan, registry,
                                                   cfg.planner.use_deferral)
        for k in stream_plan:
            log.append({"event": "schedule", "stream": k[0], "key": key_repr(k),
                        "set": "now" if k in set(now) else "deferred",
                        "reason": reasons[k]})
        mark = len(registry.bind_history)
        bindings: dict = {}

        def blame(fk: tuple) -> bool:
            """Retract the most recently bound unprotected value among the
            failing instance's transitive input ancestry.  Walking upstream
            matters when the direct producer is deterministic: re-sampling it
            can only repeat the same rejected output, so the real culprit is
            an earlier choice (a placement or a base) feeding it."""
            cand: set = set()
            stack, seen = [fk], set()
            while stack:
                k = stack.pop()
                if k in seen:
                    continue
                seen.add(k)
                ins = registry.instances.get(k)
                if ins is None:
                    continue
                for v in ins.inputs:
                    rv = bindings.get(v, v)
                    if is_optimistic(rv):
                        stack.append(rv.source[0])
                        continue
                    if rv in registry.eager_values:
                        continue
                    cand.add(rv)
                    src = registry.value_source.get(rv)
                    if src is not None:
                        stack.append(src)
            for v in reversed(registry.bind_history):
                if v in cand:
                    registry.retract_value(v, log)
                    return True
            return False

        failed_key, fail_why = bind_instances(now, registry, clock, cfg, log, bindings)
        if failed_key is not None:
            blame(failed_key)
            continue
        plan2 = substitute_plan(plan, bindings, problem)
        total, failure = replay(plan2, problem.init, goal, problem.ctx)
        if failure is not None:
            idx, (kind, f) = failure
            round_bound = [v for v in registry.bind_history[mark:]
                           if v not in registry.eager_values]
            suspects = set()
            if idx < len(plan2):
                suspects.update(v for v in iter_action_values(plan2[idx]))
            if f is not None:
                suspects.update(f.args)
            victim = None
            for v in reversed(round_bound):
                if v in suspects:
                    victim = v
                    break
            if victim is None and round_bound:
                victim = round_bound[-1]
            log.append({"event": "replay-fail", "index": idx, "kind": kind,
                        "fact": repr(f) if f is not None else None})
            if victim is None:
                return None
            registry.retract_value(victim, log)
            continue
        if total > problem.max_cost + 1e-9:
            return None
        # An optimistic move target can bind to the configuration the robot is
        # already at, leaving a self-loop transit in the plan.  Drop those:
        # executing one is pure drift, and a skeleton extracted from one would
        # demand a self-loop move that no ground action provides.
        def self_loop(ga: GroundAction) -> bool:
            return ga.transit and all(d in ga.adds for d in ga.dels)

        def strip(p: list, t: float):
            kept = [ga for ga in p if not self_loop(ga)]
            if kept and len(kept) < len(p):
                return kept, t - sum(ga.cost for ga in p if self_loop(ga))
            return p, t

        plan3, total3 = strip(plan2, total)
        trouble = False
        while any_optimistic(list(iter_action_values(plan3[0]))):
            # stripping promoted an action whose streams were deferred; bind
            # them now so the head of the returned plan stays concrete
            needed: list[tuple] = []

            def want(key: tuple) -> None:
                if key in needed:
                    return
                for iv in registry.instances[key].inputs:
                    rv = bindings.get(iv, iv)
                    if is_optimistic(rv):
                        want(rv.source[0])
                needed.append(key)

            for v in iter_action_values(plan3[0]):
                if is_optimistic(v):
                    want(v.source[0])
            fk, _why = bind_instances(needed, registry, clock, cfg, log, bindings)
            if fk is not None:
                # a stream the promoted head depends on cannot bind; retract
                # like any bind failure so later rounds reroute around it
                blame(fk)
                trouble = True
                break
            plan4 = substitute_plan(plan, bindings, problem)
            total4, failure4 = replay(plan4, problem.init, goal, problem.ctx)
            if failure4 is not None:
                idx, (kind, f) = failure4
                round_bound = [v for v in registry.bind_history[mark:]
                               if v not in registry.eager_values]
                suspects = set()
                if idx < len(plan4):
                    suspects.update(iter_action_values(plan4[idx]))
                if f is not None:
                    suspects.update(f.args)
                victim = None
                for v in reversed(round_bound):
                    if v in suspects:
                        victim = v
                        break
                if victim is None and round_bound:
                    victim = round_bound[-1]
                log.append({"event": "replay-fail", "index": idx, "kind": kind,
                            "fact": repr(f) if f is not None else None})
                if victim is None:
                    return None
                registry.retract_value(victim, log)
                trouble = True
                break
            plan3, total3 = strip(plan4, total4)
        if trouble:
            continue
        return Solution(plan3, total3, constant_facts(registry), rounds, levels,
                        now=tuple(now), deferred=tuple(deferred), reasons=reasons)
    return None
