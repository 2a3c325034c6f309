"""Typed planning language: values, facts, formulas, schemata, grounding.

Plans are sequences of ground actions over a state that is a frozen set of
fluent facts.  Static facts (certified by streams or carried across
episodes) live beside the state in an evaluation context together with
programmatic predicates such as occlusion tests and belief-mass goals.

Problem/plan dump grammar (s-expressions, one per line in plans):

    (problem (:static FACT*) (:init FACT*) (:goal FORMULA))
    FACT    := (PRED ARG*)
    ARG     := name | (num FLOAT*) | kind#uid | ?opt:uid
    FORMULA := FACT | (and FORMULA*) | (not FORMULA) | (= ARG ARG)
             | (imply FORMULA FORMULA)
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable


class Value:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Value):
    """Named constant: objects, parts, joints, grasps, regions, symbols."""

    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Num(Value):
    """Numeric tuple value: configurations, extensions, counters."""

    data: tuple[float, ...]

    def __repr__(self):
        return "(num " + " ".join(repr(x) for x in self.data) + ")"


class Opaque(Value):
    """Identity-compared payload: beliefs, observations, trajectories."""

    __slots__ = ("uid", "kind", "payload")

    def __init__(self, uid: int, kind: str, payload):
        self.uid = uid
        self.kind = kind
        self.payload = payload

    def __eq__(self, other):
        return isinstance(other, Opaque) and other.uid == self.uid

    def __hash__(self):
        return hash(("opaque", self.uid))

    def __repr__(self):
        return f"{self.kind}#{self.uid}"


class OptValue(Value):
    """Placeholder for a not-yet-computed stream output."""

    __slots__ = ("uid", "kind", "source")

    def __init__(self, uid: int, kind: str, source):
        self.uid = uid
        self.kind = kind
        self.source = source    # (stream instance key, output index)

    def __eq__(self, other):
        return isinstance(other, OptValue) and other.uid == self.uid

    def __hash__(self):
        return hash(("opt", self.uid))

    def __repr__(self):
        return f"?opt:{self.uid}"


@dataclass(frozen=True)
class Sym(Value):
    """Skeleton placeholder standing for a shared non-constant value."""

    name: str

    def __repr__(self):
        return self.name


class ValueFactory:
    """Deterministic uid source for opaque and optimistic values."""

    def __init__(self):
        self._next = itertools.count(1)

    def opaque(self, kind: str, payload) -> Opaque:
        return Opaque(next(self._next), kind, payload)

    def optimistic(self, kind: str, source) -> OptValue:
        return OptValue(next(self._next), kind, source)


def is_optimistic(v) -> bool:
    return isinstance(v, OptValue)


def any_optimistic(values: Iterable) -> bool:
    return any(is_optimistic(v) for v in values)


class Fact:
    """Ground atom; hash precomputed since states live in frozensets."""

    __slots__ = ("pred", "args", "_hash")

    def __init__(self, pred: str, args: tuple):
        self.pred = pred
        self.args = args
        self._hash = hash((pred, args))

    def __eq__(self, other):
        return self is other or (isinstance(other, Fact)
                                 and self._hash == other._hash
                                 and self.pred == other.pred
                                 and self.args == other.args)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        if not self.args:
            return f"({self.pred})"
        return "(" + self.pred + " " + " ".join(repr(a) for a in self.args) + ")"


def fact(pred: str, *args) -> Fact:
    return Fact(pred, tuple(args))


# ---------------------------------------------------------------------------
# formulas

@dataclass(frozen=True)
class Lit:
    f: Fact

    def __repr__(self):
        return repr(self.f)


@dataclass(frozen=True)
class Not:
    body: object

    def __repr__(self):
        return f"(not {self.body!r})"


@dataclass(frozen=True)
class And:
    parts: tuple

    def __repr__(self):
        return "(and " + " ".join(repr(p) for p in self.parts) + ")"


@dataclass(frozen=True)
class Eq:
    a: object
    b: object

    def __repr__(self):
        return f"(= {self.a!r} {self.b!r})"


@dataclass(frozen=True)
class Imply:
    ante: object
    cons: object

    def __repr__(self):
        return f"(imply {self.ante!r} {self.cons!r})"


TestFn = Callable[[frozenset, tuple], "bool | None"]


@dataclass
class EvalContext:
    """Static facts plus programmatic predicate evaluators.

    A test returning None could not be decided (optimistic arguments); the
    planner treats that as optimistically true.
    """

    static: set = field(default_factory=set)
    tests: dict[str, TestFn] = field(default_factory=dict)

    def lit_holds(self, state: frozenset, f: Fact) -> bool:
        if f in state or f in self.static:
            return True
        test = self.tests.get(f.pred)
        if test is not None:
            r = test(state, f.args)
            return True if r is None else bool(r)
        return False


def holds(state: frozenset, formula, ctx: EvalContext) -> bool:
    """Closed-world evaluation of a ground formula against a state."""
    if isinstance(formula, Lit):
        return ctx.lit_holds(state, formula.f)
    if isinstance(formula, Fact):
        return ctx.lit_holds(state, formula)
    if isinstance(formula, And):
        return all(holds(state, p, ctx) for p in formula.parts)
    if isinstance(formula, Not):
        return not holds(state, formula.body, ctx)
    if isinstance(formula, Eq):
        return formula.a == formula.b
    if isinstance(formula, Imply):
        return (not holds(state, formula.ante, ctx)) or holds(state, formula.cons, ctx)
    raise TypeError(f"not a formula: {formula!r}")


# ---------------------------------------------------------------------------
# ground actions

@dataclass(frozen=True)
class CondEffect:
    requires: tuple[Fact, ...]     # positive fluents checked on the pre-state
    adds: tuple[Fact, ...]


@dataclass(frozen=True)
class GroundAction:
    name: str
    args: tuple
    pre: tuple[Fact, ...]                       # positive fluent literals
    neg_pre: tuple[Fact, ...]                   # negated fluent literals
    test_pre: tuple[tuple, ...]                 # (negated, Fact) programmatic
    adds: tuple[Fact, ...]
    dels: tuple[Fact, ...]
    cond_effects: tuple[CondEffect, ...]
    cost: float
    support: tuple[Fact, ...] = ()              # static facts this action used
    transit: bool = False                       # pure repositioning step
    # skeleton-constraint extras (filled by the policy compiler)
    constraint_requires: tuple = ()             # ((sym, value), ...)
    constraint_effects: tuple = ()              # facts added unconditionally

    def signature(self) -> tuple:
        return (self.name, self.args)

    def __repr__(self):
        return "(" + " ".join([self.name] + [repr(a) for a in self.args]) + ")"


def applicable(state: frozenset, ga: GroundAction, ctx: EvalContext) -> bool:
    for f in ga.pre:
        if f not in state and f not in ctx.static:
            return False
    for f in ga.neg_pre:
        if f in state:
            return False
    for sym, val in ga.constraint_requires:
        if fact("Bound", sym) in state and fact("Assigned", sym, val) not in state:
            return False
    for negated, f in ga.test_pre:
        r = ctx.lit_holds(state, f)
        if r == negated:
            return False
    return True


def apply(state: frozenset, ga: GroundAction, ctx: EvalContext) -> tuple[frozenset, float]:
    """Successor state and cost delta; the action must be applicable."""
    if not applicable(state, ga, ctx):
        raise ValueError(f"inapplicable: {ga!r}")
    new = set(state)
    for ce in ga.cond_effects:
        if all(r in state for r in ce.requires):
            new.update(ce.adds)
    new.difference_update(ga.dels)
    new.update(ga.adds)
    new.update(ga.constraint_effects)
    for sym, val in ga.constraint_requires:
        new.add(fact("Bound", sym))
        new.add(fact("Assigned", sym, val))
    return frozenset(new), ga.cost


# ---------------------------------------------------------------------------
# schemata and grounding

@dataclass(frozen=True)
class ActionSchema:
    """Lifted action; parameters are bound by joining static preconditions."""

    name: str
    params: tuple[str, ...]
    static_pre: tuple[tuple, ...]
    fluent_pre: tuple[tuple, ...] = ()
    neg_pre: tuple[tuple, ...] = ()
    test_pre: tuple[tuple, ...] = ()            # (negated, pred, *args)
    adds: tuple[tuple, ...] = ()
    dels: tuple[tuple, ...] = ()
    cost_fn: Callable = lambda binding, support: 1.0
    guard: Callable | None = None               # (binding, support) -> bool
    cond_effects_fn: Callable | None = None     # (binding) -> tuple[CondEffect,...]
    transit: bool = False                       # moves one configuration fluent
                                                # and nothing else; the search
                                                # folds it into the next action


@dataclass(frozen=True)
class DerivedPredicate:
    """Declared shape of a programmatic predicate, for the dump and docs."""

    name: str
    params: tuple[str, ...]
    doc: str


@dataclass(frozen=True)
class StreamSchema:
    name: str
    inputs: tuple[str, ...]
    domain: tuple[tuple, ...]         # static fact patterns over inputs
    outputs: tuple[str, ...]
    certified: tuple[tuple, ...]      # fact patterns over inputs + outputs
    output_kinds: tuple[str, ...] = ()
    eager: bool = False               # evaluate on real inputs during layering
    deferrable: bool = False          # may stay unevaluated past planning
    is_test: bool = False             # no outputs; certifies or fails
    once: bool = False                # single deterministic output; skip when
                                      # its certified fact is already known


def _subst(pattern: tuple, binding: dict) -> Fact:
    return Fact(pattern[0], tuple(binding[t] if isinstance(t, str) and t.startswith("?") else t
                                  for t in pattern[1:]))


def match(pattern: tuple, f: Fact, binding: dict) -> dict | None:
    if pattern[0] != f.pred or len(pattern) - 1 != len(f.args):
        return None
    out = dict(binding)
    for t, v in zip(pattern[1:], f.args):
        if isinstance(t, str) and t.startswith("?"):
            if t in out:
                if out[t] != v:
                    return None
            else:
                out[t] = v
        elif t != v:
            return None
    return out


def join(patterns: tuple[tuple, ...], facts_by_pred: dict[str, list[Fact]],
         binding: dict | None = None) -> list[tuple[dict, list[Fact]]]:
    """All bindings satisfying a conjunction of static patterns, in a
    deterministic order derived from fact insertion order."""
    results = [(dict(binding or {}), [])]
    for pat in patterns:
        nxt = []
        for bnd, used in results:
            for f in facts_by_pred.get(pat[0], ()):
                b2 = match(pat, f, bnd)
                if b2 is not None:
                    nxt.append((b2, used + [f]))
        results = nxt
        if not results:
            break
    return results


def index_facts(facts: Iterable[Fact]) -> dict[str, list[Fact]]:
    by: dict[str, list[Fact]] = {}
    for f in facts:
        by.setdefault(f.pred, []).append(f)
    return by


def ground_schema(schema: ActionSchema, facts_by_pred: dict[str, list[Fact]]) -> list[GroundAction]:
    out = []
    for binding, support in join(schema.static_pre, facts_by_pred):
        if schema.guard is not None and not schema.guard(binding, support):
            continue
        args = tuple(binding[p] for p in schema.params)
        cond = schema.cond_effects_fn(binding) if schema.cond_effects_fn else ()
        out.append(GroundAction(
            name=schema.name,
            args=args,
            pre=tuple(_subst(p, binding) for p in schema.fluent_pre),
            neg_pre=tuple(_subst(p, binding) for p in schema.neg_pre),
            test_pre=tuple((neg, _subst(p, binding)) for neg, *p_ in schema.test_pre
                           for p in [tuple(p_)]),
            adds=tuple(_subst(p, binding) for p in schema.adds),
            dels=tuple(_subst(p, binding) for p in schema.dels),
            cond_effects=tuple(cond),
            cost=float(schema.cost_fn(binding, support)),
            support=tuple(support),
            transit=schema.transit,
        ))
    return out


# ---------------------------------------------------------------------------
# problems

@dataclass
class Problem:
    init: frozenset
    goal: object
    schemas: tuple[ActionSchema, ...]
    streams: tuple[StreamSchema, ...]
    derived: tuple[DerivedPredicate, ...]
    ctx: EvalContext
    max_cost: float
    stream_fns: dict[str, Callable] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def dump_fact(f: Fact) -> str:
    return repr(f)


def dump_problem(p: Problem) -> str:
    statics = " ".join(sorted(dump_fact(f) for f in p.ctx.static))
    init = " ".join(sorted(dump_fact(f) for f in p.init))
    return f"(problem (:static {statics}) (:init {init}) (:goal {p.goal!r}))"


def dump_plan(plan: list[GroundAction]) -> str:
    return "\n".join(f"{i + 1}: {ga!r}" for i, ga in enumerate(plan))
