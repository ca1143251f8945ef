"""Command-line driver: train, evaluate, check, report.

Exit codes: 0 success, 1 property-check failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys

from .config import (BACKBONES, METHODS, PENALTIES, ConfigError, load_config)
from .experiment import (actor_from_checkpoint, append_results, emit_report,
                         run_collect_train, run_evaluate, summarize_results)
from .nn import MalformedCheckpointError, CheckpointVersionError
from .properties import run_property_checks


def _add_common(sub):
    sub.add_argument("--config", default=None, help="flat JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="base seed")
    sub.add_argument("--method", choices=METHODS, default=None)
    sub.add_argument("--backbone", choices=BACKBONES, default=None)
    sub.add_argument("--penalty", choices=PENALTIES, default=None)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--trials", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rpaf",
        description="Cache-allocation workbench: prediction-stage training, "
                    "allocation-stage evaluation, property checks, reports.")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, txt in (("train", "collect experience and train the predictor"),
                      ("evaluate", "run a method over trial horizons"),
                      ("check", "run release-gate property checks"),
                      ("report", "summarize results CSVs in the output dir")):
        sub = subs.add_parser(name, help=txt)
        _add_common(sub)
        if name == "evaluate":
            sub.add_argument("--checkpoint", default=None,
                             help="trained checkpoint (defaults to the "
                                  "train command's path under --out)")
    return parser


def _load(args):
    overrides = {k: getattr(args, k) for k in
                 ("seed", "method", "backbone", "penalty", "trials")}
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def checkpoint_path(out_dir, backbone, penalty, seed):
    return os.path.join(out_dir, f"checkpoint_{backbone}_{penalty}_{seed}.rpaf")


def cmd_train(args):
    exp = _load(args)
    seed = exp.sim.seed
    os.makedirs(exp.out_dir, exist_ok=True)
    ckpt = checkpoint_path(exp.out_dir, exp.backbone, exp.penalty, seed)
    diag = os.path.join(exp.out_dir,
                        f"training_{exp.backbone}_{exp.penalty}_{seed}.csv")
    _, rows = run_collect_train(exp, seed, checkpoint_path=ckpt,
                                diagnostics_path=diag)
    last = rows[-1]
    print(f"trained {exp.backbone}/{exp.penalty} seed={seed}: "
          f"mean_a_tilde={last['mean_a_tilde']:.4f} "
          f"critic_loss={last['critic_loss']:.4f}")
    print(f"checkpoint: {ckpt}")
    print(f"diagnostics: {diag}")
    return 0


def cmd_evaluate(args):
    exp = _load(args)
    seed = exp.sim.seed
    os.makedirs(exp.out_dir, exist_ok=True)
    actor_fn = None
    if exp.method in ("rpaf", "rpaf-nopool"):
        ckpt = args.checkpoint or checkpoint_path(
            exp.out_dir, exp.backbone, exp.penalty, seed)
        if not os.path.exists(ckpt):
            raise ConfigError(f"checkpoint not found: {ckpt} "
                              f"(run `rpaf train` first or pass --checkpoint)")
        actor_fn = actor_from_checkpoint(exp, ckpt)
    result = run_evaluate(exp, seed, actor_fn=actor_fn)
    for t, rows in enumerate(result.hourly):
        emit_report(rows, os.path.join(
            exp.out_dir, f"hourly_{exp.method}_{seed}_{t}.csv"))
    append_results(result, exp, os.path.join(
        exp.out_dir, f"results_{exp.method}_{seed}.csv"))
    print(f"{exp.method} seed={seed} trials={len(result.watchtimes)}: "
          f"watchtime {result.mean:.4f} +/- {result.std:.4f}")
    return 0


def cmd_check(args):
    seed = args.seed if args.seed is not None else 0
    results = run_property_checks(seed=seed)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_report(args):
    exp = _load(args)
    paths = sorted(glob.glob(os.path.join(exp.out_dir, "results_*.csv")))
    if not paths:
        raise ConfigError(f"no results CSVs under {exp.out_dir}")
    lines = summarize_results(paths)
    summary_path = os.path.join(exp.out_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"summary: {summary_path}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "evaluate": cmd_evaluate,
                "check": cmd_check, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (MalformedCheckpointError, CheckpointVersionError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
