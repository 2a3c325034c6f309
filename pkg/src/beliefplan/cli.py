"""Command-line entry point for running the benchmark suite."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .config import DEFAULT
from .harness import ABLATIONS, TASKS, run_benchmark
from .world import load_scene

log = logging.getLogger("beliefplan")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beliefplan",
        description="Belief-space replanning benchmark over drawer-and-counter tasks.")
    p.add_argument("--task", default="all", choices=(*TASKS, "all"))
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--constrain", choices=("on", "off"), default=None,
                   help="force plan-structure constraints; omit to sweep all ablations")
    p.add_argument("--defer", choices=("on", "off"), default=None,
                   help="force deferred stream evaluation; omit to sweep all ablations")
    p.add_argument("--budget", type=float, default=DEFAULT.budget,
                   help="planning budget per trial in synthetic seconds")
    p.add_argument("--max-cost", type=float, default=DEFAULT.planner.max_cost)
    p.add_argument("--particles", type=int, default=DEFAULT.belief.particles)
    p.add_argument("--out", default="results")
    p.add_argument("--scene", default=None, help="scene json file (default: built-in desk)")
    p.add_argument("--log-streams", action="store_true",
                   help="also write per-stream-event rows to streams.ndjson")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BELIEFPLAN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    cfg = replace(
        DEFAULT,
        budget=args.budget,
        planner=replace(DEFAULT.planner, max_cost=args.max_cost),
        belief=replace(DEFAULT.belief, particles=args.particles),
    )
    tasks = TASKS if args.task == "all" else (args.task,)
    if args.constrain is None and args.defer is None:
        ablations = ABLATIONS
    else:
        constrain = (args.constrain or "on") == "on"
        defer = (args.defer or "on") == "on"
        label = f"constrain-{'on' if constrain else 'off'}_defer-{'on' if defer else 'off'}"
        ablations = ((label, constrain, defer),)
    scene = load_scene(args.scene) if args.scene else None

    log.info("running %d task(s) x %d ablation(s) x %d trial(s)",
             len(tasks), len(ablations), args.trials)
    out = run_benchmark(args.out, tasks=tasks, trials=args.trials, cfg=cfg,
                        seed0=args.seed, ablations=ablations,
                        log_streams=args.log_streams, scene=scene)

    header = f"{'task':<10} {'ablation':<26} {'success':>8} {'time(s)':>10} {'replans':>8}"
    print(header)
    print("-" * len(header))
    for cell in out["cells"]:
        t = cell["mean_time_success"]
        print(f"{cell['task']:<10} {cell['ablation']:<26} "
              f"{cell['successes']:>3}/{cell['trials']:<4} "
              f"{t if t != '' else '-':>10} {cell['mean_replans']:>8}")
    print(f"results written to {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
