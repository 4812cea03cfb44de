"""Command line entry points: `guidedrts train ...` and `guidedrts evaluate ...`."""

from __future__ import annotations

import argparse
import json
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedrts",
                                     description="Train and evaluate gridworld-RTS agents")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training experiment")
    train.add_argument("--config", default=None, help="flat key=value config file")
    train.add_argument("--task", default=None)
    train.add_argument("--strategy", default=None, choices=harness.STRATEGIES)
    train.add_argument("--plo", action="store_true", default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--total-timesteps", type=int, default=None)
    train.add_argument("--shift", type=int, default=None)
    train.add_argument("--adaptation", type=int, default=None)
    train.add_argument("--epsilon-end", type=float, default=None)
    train.add_argument("--out", default=None, help="output directory")
    train.add_argument("--num-envs", type=int, default=None)
    train.add_argument("--num-steps", type=int, default=None)
    train.add_argument("--max-ticks", type=int, default=None)
    train.add_argument("--checkpoint-interval", type=int, default=None)
    train.add_argument("--resume", default=None, help="checkpoint base path to resume from")
    train.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint's main policy")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", required=True)
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        overrides = {
            "task": args.task, "strategy": args.strategy, "plo": args.plo,
            "seed": args.seed, "total_timesteps": args.total_timesteps,
            "shift": args.shift, "adaptation": args.adaptation,
            "epsilon_end": args.epsilon_end, "out_dir": args.out,
            "num_envs": args.num_envs, "num_steps": args.num_steps,
            "max_ticks": args.max_ticks, "checkpoint_interval": args.checkpoint_interval,
            "resume": args.resume,
        }
        try:
            cfg = harness.parse_config(args.config, overrides)
        except (ValueError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        log = (lambda *_: None) if args.quiet else print
        csv_path, ckpt = harness.run_experiment(cfg, log=log)
        print(json.dumps({"metrics": csv_path, "checkpoint": ckpt}))
        return 0
    if args.command == "evaluate":
        result = harness.evaluate(args.checkpoint, args.task, args.episodes, args.seed)
        print(f"episode reward (sparse): {result['mean']:.4f} +/- {result['std']:.4f} "
              f"over {result['episodes']} episodes")
        print(json.dumps(result))
        return 0
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
