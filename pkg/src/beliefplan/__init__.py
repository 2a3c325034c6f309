"""Belief-space replanning for partially observable manipulation tasks.

A particle-filter belief over object poses is determinized into an
optimistic stream-planning problem; a replan-after-each-action policy
executes it, reusing the previous plan's structure as a constraint and
deferring expensive sampling work that the next replan would discard.
"""

from .belief import FactoredBelief, ParticleBelief, SensorModel
from .config import Config, DEFAULT
from .domain import GoalSpec, determinize, evaluate_goal
from .harness import EnvSimulator, TrialResult, make_task, run_benchmark, run_trial
from .obsmodel import (ObservationHypothesis, SelfLoopCosts, determinized_cost,
                       detection_probability_bound, sample_observation,
                       visibility_lower_bound)
from .planner import Solution, StreamRegistry, VirtualClock, solve
from .policy import run_policy
from .world import LatentState, Pose, Scene, load_scene

__all__ = [
    "Config", "DEFAULT", "EnvSimulator", "FactoredBelief", "GoalSpec",
    "LatentState", "ObservationHypothesis", "ParticleBelief", "Pose", "Scene",
    "SelfLoopCosts", "SensorModel", "Solution", "StreamRegistry",
    "TrialResult", "VirtualClock", "detection_probability_bound",
    "determinize", "determinized_cost", "evaluate_goal", "load_scene",
    "make_task", "run_benchmark", "run_policy", "run_trial",
    "sample_observation", "solve", "visibility_lower_bound",
]

__version__ = "0.1.0"
