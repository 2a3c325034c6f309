"""Tunable constants for the belief-space replanning stack.

Everything that affects planning behaviour, noise, costs, or budgets lives
here so that benchmark runs are a pure function of one config object.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class ActionCosts:
    """Base success/recovery costs and success-probability floors."""

    move_base: float = 2.0
    move_arm: float = 1.0
    manip: float = 1.0          # pick / place / pull / push / press
    detect_base: float = 1.0    # success cost of a detect
    detect_recover: float = 1.0  # cost of one recovery attempt after a miss
    actuation_p: float = 0.95   # success-probability floor for actuation


@dataclass(frozen=True)
class NoiseModel:
    """Actuation and sensing noise used by the simulator and the filter."""

    base_sigma: float = 0.02    # m, rail position after a base move
    arm_sigma: float = 0.005    # m per axis, end-effector after an arm move
    sensor_sigma: float = 0.01  # m per axis, pose observation
    p_false_negative: float = 0.1


@dataclass(frozen=True)
class PlannerConfig:
    """Knobs of the optimistic stream planner and the replanning policy."""

    optimistic_levels: int = 4
    max_optimistic_levels: int = 6
    generator_attempts: int = 4          # bind attempts per stream instance
    max_obs_hypotheses: int = 3          # distinct-region detects per belief
    constrained_timeout_frac: float = 0.25
    heuristic_weight: float = 0.0        # 0 = uniform-cost search
    max_cost: float = 100.0
    use_constraints: bool = True
    use_deferral: bool = True
    max_episodes: int = 40


@dataclass(frozen=True)
class BeliefConfig:
    particles: int = 100
    resample: bool = False               # systematic resampling behind a flag
    ess_fraction: float = 0.5            # resample when ESS < fraction * N


@dataclass(frozen=True)
class EffortModel:
    """Deterministic planning clock.

    Budgets are charged in synthetic seconds derived from work counts so that
    trial outcomes do not depend on host load.  The weights approximate wall
    seconds on commodity hardware.
    """

    per_expansion: float = 1.0 / 4000.0
    per_stream_call: float = 1.0 / 800.0
    per_ground_action: float = 1.0 / 8000.0
    per_belief_update: float = 1.0 / 2000.0


@dataclass(frozen=True)
class Config:
    costs: ActionCosts = field(default_factory=ActionCosts)
    noise: NoiseModel = field(default_factory=NoiseModel)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    belief: BeliefConfig = field(default_factory=BeliefConfig)
    effort: EffortModel = field(default_factory=EffortModel)

    delta: float = 0.1            # m, radius of an observation region
    epsilon: float = 0.05         # per-occluder visibility slack
    goal_confidence: float = 0.95  # mass threshold for belief goals
    grasp_tol: float = 0.02       # m, pick tolerance and localization radius
    joint_tol: float = 0.01      # m, tolerance on joint-extension goals
    motion_resolution: float = 0.01  # m, interpolation step for motion checks
    budget: float = 60.0          # synthetic seconds of planning per trial

    def with_ablation(self, constrain: bool, defer: bool) -> "Config":
        return replace(
            self,
            planner=replace(self.planner, use_constraints=constrain, use_deferral=defer),
        )


DEFAULT = Config()
