"""Command line entry point: ``tabletop-her {train,eval,analyze,baseline}``.

Exit codes: 0 success, 1 I/O or checkpoint failure, 2 configuration error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from importlib import resources
from pathlib import Path

from . import trainer
from .analysis import EmptyStreamError, LogParseError, aggregate, iter_log_dir, render_plots
from .simenv import ConfigError, Variant, make_config

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
VARIANTS = [v.value for v in Variant]

log = logging.getLogger("tabletop_her")


def default_config_path(name: str = "default") -> Path:
    return Path(str(resources.files("tabletop_her") / "configs" / f"{name}.json"))


def _variant(text: str) -> str:
    try:
        return Variant.parse(text).value
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabletop-her", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train DDPG+HER and write metrics.csv and checkpoints")
    t.add_argument("--env", type=_variant, required=True, metavar="{" + "|".join(VARIANTS) + "}")
    t.add_argument("--config", type=Path, default=None, help="training config JSON (default: packaged default)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--workers", type=_positive, default=None)
    t.add_argument("--from-checkpoint", type=Path, default=None,
                   help="resume if the config matches the checkpoint, otherwise warm-start from its weights")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint, streaming episode logs")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--env", type=_variant, default=None, help="default: the checkpoint's training variant")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--log-dir", type=Path, default=None)

    a = sub.add_parser("analyze", help="event, attempt and density tables plus SVG figures from episode logs")
    a.add_argument("--logs", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--bandwidth", type=float, default=0.02)

    b = sub.add_parser("baseline", help="success rate of the uniform random policy")
    b.add_argument("--env", type=_variant, required=True)
    b.add_argument("--episodes", type=_positive, default=500)
    b.add_argument("--seed", type=int, default=0)
    return p


def cmd_train(args) -> int:
    cfg_path = args.config or default_config_path()
    cfg = trainer.load_train_config(cfg_path, env=args.env, seed=args.seed, output_dir=str(args.out),
                                    workers=args.workers)
    init, resume = None, False
    if args.from_checkpoint is not None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", trainer.ConfigHashWarning)
            _, init = trainer.load_checkpoint(args.from_checkpoint, expected=cfg)
        mismatch = [w for w in caught if issubclass(w.category, trainer.ConfigHashWarning)]
        for w in mismatch:
            print(f"warning: {w.message}; warm-starting with fresh counters", file=sys.stderr)
        resume = not mismatch
        if init.obs_norm.dim != cfg.env_config().obs_dim:
            raise ConfigError(f"checkpoint policy takes {init.obs_norm.dim}-dim observations, "
                              f"variant {cfg.env!r} emits {cfg.env_config().obs_dim}")

    def report(m: trainer.EpochMetrics) -> None:
        log.info("epoch %d steps %d train %.3f eval %.3f reward %.2f", m.epoch, m.env_steps,
                 m.train_success_rate, m.eval_success_rate, m.mean_episode_reward)

    result = trainer.run_training(cfg, init=init, resume=resume, progress=report)
    print(json.dumps({"checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path),
                      "epochs": len(result.metrics)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, st = trainer.load_checkpoint(args.checkpoint)
    env = args.env or cfg.env
    env_cfg = make_config(env, **cfg.env_overrides)
    log_path = None
    if args.log_dir is not None:
        log_path = args.log_dir / f"eval_{env}_seed{args.seed}.jsonl"
    res = trainer.evaluate((cfg, st), env_cfg, args.episodes, args.seed, log_path)
    print(json.dumps({"env": env, "episodes": res.episodes, "success_rate": res.success_rate,
                      "mean_reward": res.mean_reward, "log": None if log_path is None else str(log_path)}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.bandwidth <= 0:
        raise ConfigError("--bandwidth must be positive")
    if not args.logs.exists():
        raise FileNotFoundError(args.logs)
    tables = aggregate(iter_log_dir(args.logs), bandwidth=args.bandwidth)
    written = tables.write(args.out) + render_plots(tables, args.out)
    print(json.dumps({"episodes": len(tables.episodes.rows), "files": [str(p) for p in written]}))
    return EXIT_OK


def cmd_baseline(args) -> int:
    res = trainer.random_policy_baseline(make_config(args.env), args.episodes, args.seed)
    print(json.dumps({"env": args.env, "episodes": res.episodes, "success_rate": res.success_rate,
                      "mean_reward": res.mean_reward}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze, "baseline": cmd_baseline}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except trainer.TrainingAborted as exc:
        print(f"error: {exc} (state saved to {exc.checkpoint})", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, trainer.EmptyEvaluationError, EmptyStreamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (trainer.CheckpointError, LogParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
