"""Command-line entry point.

    drlcontrol run --config PATH [--seed N] [--out DIR] [--episodes N]
    drlcontrol example1 [--episodes N] [--seed N] [--out DIR]
    drlcontrol eval --checkpoint PATH --config PATH [--steps N] [--tolerance X]
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from drlcontrol.errors import DrlControlError

log = logging.getLogger("drlcontrol")

EXAMPLES = ("example1", "example2", "example3", "example4")


def _parser():
    p = argparse.ArgumentParser(prog="drlcontrol", description="Actor-critic set-point tracking experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress every episode")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--episodes", type=int)

    for name in EXAMPLES:
        ex = sub.add_parser(name, help=f"train the bundled {name} preset")
        ex.add_argument("--episodes", type=int)
        ex.add_argument("--seed", type=int)
        ex.add_argument("--out")

    ev = sub.add_parser("eval", help="roll out a saved policy without exploration")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", required=True)
    ev.add_argument("--steps", type=int)
    ev.add_argument("--tolerance", type=float, default=0.1)
    ev.add_argument("--seed", type=int, default=0)
    return p


def _train(cfg, args):
    from drlcontrol.harness.runner import run_experiment

    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.episodes is not None:
        if cfg.continuous:
            over["total_steps"] = args.episodes * cfg.episode.max_steps
        else:
            over["episodes"] = args.episodes
    cfg = cfg.with_overrides(**over)
    out = Path(args.out or cfg.output_dir)

    def progress(runner, i):
        e = runner.log.episodes[-1]
        log.info("episode %d reward %.4f steps %d", e.episode, e.total_reward, e.steps)

    log_, _ = run_experiment(cfg, out, callback=progress)
    print(f"{len(log_)} episodes written to {out}")


def _eval(args):
    from drlcontrol.agent import load_agent
    from drlcontrol.env import GridSetpoints
    from drlcontrol.harness.config import load_config
    from drlcontrol.harness.runner import evaluate_policy

    cfg = load_config(args.config)
    agent = load_agent(args.checkpoint)
    if isinstance(cfg.setpoints, GridSetpoints):
        targets = [[v] * cfg.setpoints.channels for v in cfg.setpoints.values]
    else:
        rng = np.random.default_rng(args.seed)
        targets = [cfg.setpoints.sample(rng, 0) for _ in range(10)]
    steps = args.steps or cfg.episode.max_steps
    results = evaluate_policy(agent, cfg, targets, steps=steps, tolerance=args.tolerance, seed=args.seed)
    print("setpoint reached steps final_error")
    for r in results:
        sp = ",".join(f"{v:g}" for v in r.setpoint)
        print(f"{sp} {int(r.reached)} {r.steps_to_reach} {r.final_error:.6g}")
    n = sum(r.reached for r in results)
    print(f"reached {n}/{len(results)}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        from drlcontrol.harness.config import load_config, load_preset

        if args.command == "run":
            _train(load_config(args.config), args)
        elif args.command in EXAMPLES:
            _train(load_preset(args.command), args)
        else:
            _eval(args)
    except (DrlControlError, OSError) as exc:
        print(f"drlcontrol: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
